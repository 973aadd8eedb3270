#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace contactsense {

inline constexpr int kNumJoints = 7;
inline constexpr int kNumClasses = 3;
inline constexpr int kPeriodMs = 5;  // 200 Hz sampling
inline constexpr int kWindowRows = 40;
inline constexpr int kFeatureCols = 3 * kNumJoints;            // e_J, edot_J, tau_J
inline constexpr int kWindowSpanMs = kWindowRows * kPeriodMs;  // 200 ms
inline constexpr int kMaxContactsPerRecording = 3;

using JointVec = std::array<double, kNumJoints>;

enum class ClassLabel : int { Human = 0, Aluminum = 1, PVC = 2 };

const char* to_string(ClassLabel label);
ClassLabel class_label_from_string(const std::string& name);  // throws DataError

// One 5 ms tick of the proprioceptive stream.
struct Sample {
  std::int64_t t_ms = 0;
  JointVec q_desired{};
  JointVec q_actual{};
  JointVec qdot_desired{};
  JointVec qdot_actual{};
  JointVec tau{};
  bool contact = false;
};

// A labeled multi-contact time series from one robot run.
// Immutable after construction; validate() checks the sampling-grid and
// finiteness invariants.
struct Recording {
  std::string id;
  std::vector<Sample> samples;
  int period_ms = kPeriodMs;
  ClassLabel label = ClassLabel::Human;
  int motion_id = 0;
  int setup_id = 0;

  std::int64_t start_ms() const { return samples.empty() ? 0 : samples.front().t_ms; }
  std::int64_t end_ms() const { return samples.empty() ? 0 : samples.back().t_ms; }

  // Index of the sample at time t_ms, or -1 if t_ms is off the grid or
  // outside the recording.
  int sample_index(std::int64_t t_ms) const;

  void validate() const;  // throws DataError on any violated invariant
};

struct ContactEvent {
  std::int64_t t_contact_ms = 0;
  ClassLabel label = ClassLabel::Human;
};

// One false->true edge of the contact flag per event, in time order.
// At most the first kMaxContactsPerRecording events are retained.
std::vector<ContactEvent> detect_contacts(const Recording& recording);

struct WindowSource {
  std::string recording_id;
  int contact_index = 0;
  int window_index = 0;
  auto operator<=>(const WindowSource&) const = default;
};

// One model input: a row-major kWindowRows x kFeatureCols feature matrix
// with its label and provenance. Shape and finiteness are asserted at
// construction.
struct Window {
  std::vector<double> features;
  ClassLabel label = ClassLabel::Human;
  std::int64_t t_end_ms = 0;
  WindowSource source;

  Window() = default;
  Window(std::vector<double> features, ClassLabel label, std::int64_t t_end_ms,
         WindowSource source);

  double at(int row, int col) const { return features[row * kFeatureCols + col]; }
};

}  // namespace contactsense
