#include "contactsense/preprocessing.hpp"

#include <algorithm>
#include <string>

#include "contactsense/errors.hpp"
#include "contactsense/log.hpp"

namespace contactsense {

const char* to_string(WindowMode mode) {
  return mode == WindowMode::Fixed ? "fixed" : "sliding";
}

WindowMode window_mode_from_string(const std::string& name) {
  if (name == "fixed") return WindowMode::Fixed;
  if (name == "sliding") return WindowMode::Sliding;
  throw UsageError("unknown window mode: \"" + name + "\" (expected fixed|sliding)");
}

void PreprocessingParams::validate() const {
  if (delta_offset_ms < 0) throw UsageError("delta_offset_ms must be >= 0");
  if (delta_offset_ms % kPeriodMs != 0)
    throw UsageError("delta_offset_ms must be a multiple of " + std::to_string(kPeriodMs));
  if (mode == WindowMode::Sliding && delta_step_samples < 1)
    throw UsageError("delta_step_samples must be >= 1");
  if (horizon_ms < 0) throw UsageError("horizon_ms must be >= 0");
}

std::int64_t compute_t_end(std::int64_t t_contact_ms, const PreprocessingParams& params,
                           int window_index) {
  params.validate();
  if (window_index < 0) throw UsageError("window_index must be >= 0");
  if (params.mode == WindowMode::Fixed && window_index > 0)
    throw UsageError("fixed window mode only admits window_index 0");
  const std::int64_t step_ms =
      params.mode == WindowMode::Fixed ? 0 : static_cast<std::int64_t>(kPeriodMs) *
                                                 params.delta_step_samples;
  return t_contact_ms + params.delta_offset_ms + static_cast<std::int64_t>(window_index) * step_ms;
}

int windows_per_contact(const PreprocessingParams& params) {
  params.validate();
  if (params.mode != WindowMode::Sliding)
    throw UsageError("windows_per_contact requires sliding mode");
  if (params.delta_offset_ms > params.horizon_ms)
    throw UsageError("delta_offset_ms (" + std::to_string(params.delta_offset_ms) +
                     ") exceeds horizon_ms (" + std::to_string(params.horizon_ms) + ")");
  const int step_ms = kPeriodMs * params.delta_step_samples;
  return (params.horizon_ms - params.delta_offset_ms) / step_ms + 1;
}

std::vector<double> build_feature_matrix(const Recording& recording, std::int64_t t_end_ms,
                                         bool zero_velocity_error) {
  const std::int64_t t_start_ms = t_end_ms - (kWindowSpanMs - kPeriodMs);
  const int end_index = recording.sample_index(t_end_ms);
  const int start_index = recording.sample_index(t_start_ms);
  if (end_index < 0 || start_index < 0)
    throw DataError("window out of bounds: [" + std::to_string(t_start_ms) + ", " +
                    std::to_string(t_end_ms) + "] ms vs recording \"" + recording.id + "\" [" +
                    std::to_string(recording.start_ms()) + ", " +
                    std::to_string(recording.end_ms()) + "] ms");

  std::vector<double> features(static_cast<std::size_t>(kWindowRows) * kFeatureCols);
  for (int row = 0; row < kWindowRows; ++row) {
    const Sample& s = recording.samples[static_cast<std::size_t>(start_index) + row];
    double* out = features.data() + static_cast<std::size_t>(row) * kFeatureCols;
    for (int j = 0; j < kNumJoints; ++j) out[j] = s.q_desired[j] - s.q_actual[j];
    for (int j = 0; j < kNumJoints; ++j)
      out[kNumJoints + j] = zero_velocity_error ? 0.0 : s.qdot_desired[j] - s.qdot_actual[j];
    for (int j = 0; j < kNumJoints; ++j) out[2 * kNumJoints + j] = s.tau[j];
  }
  return features;
}

LabeledDataset build_dataset(const std::vector<Recording>& recordings,
                             const PreprocessingParams& params, BuildStats* stats) {
  params.validate();
  if (recordings.empty()) throw DataError("build_dataset: no recordings");

  BuildStats local;
  LabeledDataset dataset;
  dataset.provenance = params;

  for (const Recording& recording : recordings) {
    const std::vector<ContactEvent> contacts = detect_contacts(recording);
    local.contacts += static_cast<int>(contacts.size());
    for (std::size_t c = 0; c < contacts.size(); ++c) {
      const std::int64_t t_contact = contacts[c].t_contact_ms;
      const std::int64_t next_contact =
          c + 1 < contacts.size() ? contacts[c + 1].t_contact_ms : -1;
      const int count =
          params.mode == WindowMode::Fixed ? 1 : windows_per_contact(params);
      for (int i = 0; i < count; ++i) {
        const std::int64_t t_end = compute_t_end(t_contact, params, i);
        if (next_contact >= 0 && t_end >= next_contact) {
          ++local.discarded_cross_contact;
          continue;
        }
        try {
          std::vector<double> features =
              build_feature_matrix(recording, t_end, params.zero_velocity_error);
          dataset.windows.emplace_back(std::move(features), recording.label, t_end,
                                       WindowSource{recording.id, static_cast<int>(c), i});
        } catch (const DataError&) {
          ++local.discarded_out_of_bounds;
        }
      }
    }
  }

  std::sort(dataset.windows.begin(), dataset.windows.end(),
            [](const Window& a, const Window& b) { return a.source < b.source; });

  if (local.discarded() > 0)
    log_info("build_dataset: discarded " + std::to_string(local.discarded()) + " windows (" +
             std::to_string(local.discarded_out_of_bounds) + " out of bounds, " +
             std::to_string(local.discarded_cross_contact) + " crossing the next contact)");
  if (stats != nullptr) *stats = local;
  if (dataset.windows.empty()) throw DataError("build_dataset: no windows survived extraction");
  return dataset;
}

}  // namespace contactsense
