#pragma once

#include <cstdint>
#include <vector>

#include "contactsense/types.hpp"

namespace contactsense {

enum class WindowMode { Fixed, Sliding };

const char* to_string(WindowMode mode);
WindowMode window_mode_from_string(const std::string& name);

// Window-extraction parameters. delta_step_samples counts 5 ms samples,
// not milliseconds (one step = delta_step_samples * 5 ms).
struct PreprocessingParams {
  WindowMode mode = WindowMode::Sliding;
  int delta_offset_ms = 25;
  int delta_step_samples = 1;
  int horizon_ms = 300;
  // Diagnostic switch: write zeros into the velocity-error columns instead
  // of qdot_desired - qdot_actual.
  bool zero_velocity_error = false;

  void validate() const;  // throws UsageError
  bool operator==(const PreprocessingParams&) const = default;
};

// End time of window i for a contact at t_contact_ms:
//   t_end = t_contact + delta_offset + i * (5 * delta_step)
// Fixed mode only admits i = 0.
std::int64_t compute_t_end(std::int64_t t_contact_ms, const PreprocessingParams& params,
                           int window_index);

// Number of sliding windows per contact with t_end <= t_contact + horizon:
//   floor((horizon - delta_offset) / (5 * delta_step)) + 1
int windows_per_contact(const PreprocessingParams& params);

// Row-major kWindowRows x kFeatureCols matrix whose rows are
// [e_J, edot_J, tau_J] over the 40 samples ending at t_end_ms inclusive,
// with e_J = q_desired - q_actual and edot_J = qdot_desired - qdot_actual.
// Throws DataError("window out of bounds ...") when the span
// [t_end - 195 ms, t_end] exits the recording.
std::vector<double> build_feature_matrix(const Recording& recording, std::int64_t t_end_ms,
                                         bool zero_velocity_error = false);

struct LabeledDataset {
  std::vector<Window> windows;
  PreprocessingParams provenance;
};

struct BuildStats {
  int contacts = 0;
  int discarded_out_of_bounds = 0;
  int discarded_cross_contact = 0;
  int discarded() const { return discarded_out_of_bounds + discarded_cross_contact; }
};

// Extract every window for every retained contact of every recording,
// skipping windows that exit the recording bounds or whose span reaches the
// next contact's onset. Output is sorted by (recording id, contact index,
// window index).
LabeledDataset build_dataset(const std::vector<Recording>& recordings,
                             const PreprocessingParams& params, BuildStats* stats = nullptr);

}  // namespace contactsense
