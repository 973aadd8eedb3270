#include "contactsense/types.hpp"

#include <cmath>

#include "contactsense/errors.hpp"

namespace contactsense {

const char* to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::Human: return "Human";
    case ClassLabel::Aluminum: return "Aluminum";
    case ClassLabel::PVC: return "PVC";
  }
  return "?";
}

ClassLabel class_label_from_string(const std::string& name) {
  if (name == "Human") return ClassLabel::Human;
  if (name == "Aluminum") return ClassLabel::Aluminum;
  if (name == "PVC") return ClassLabel::PVC;
  throw DataError("unknown class label: \"" + name + "\"");
}

namespace {

bool all_finite(const JointVec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

int Recording::sample_index(std::int64_t t_ms) const {
  if (samples.empty()) return -1;
  const std::int64_t offset = t_ms - samples.front().t_ms;
  if (offset < 0 || offset % period_ms != 0) return -1;
  const std::int64_t idx = offset / period_ms;
  if (idx >= static_cast<std::int64_t>(samples.size())) return -1;
  return static_cast<int>(idx);
}

void Recording::validate() const {
  if (samples.empty()) throw DataError("recording \"" + id + "\": no samples");
  if (period_ms != kPeriodMs)
    throw DataError("recording \"" + id + "\": period_ms must be " + std::to_string(kPeriodMs));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (i > 0 && s.t_ms != samples[i - 1].t_ms + period_ms)
      throw DataError("recording \"" + id + "\": timestamp at index " + std::to_string(i) +
                      " is not previous + " + std::to_string(period_ms) + " ms");
    if (!all_finite(s.q_desired) || !all_finite(s.q_actual) || !all_finite(s.qdot_desired) ||
        !all_finite(s.qdot_actual) || !all_finite(s.tau))
      throw DataError("recording \"" + id + "\": non-finite value at index " + std::to_string(i));
  }
}

std::vector<ContactEvent> detect_contacts(const Recording& recording) {
  if (recording.samples.empty()) throw DataError("detect_contacts: no samples");
  std::vector<ContactEvent> events;
  bool previous = false;
  for (const Sample& s : recording.samples) {
    if (s.contact && !previous) {
      if (static_cast<int>(events.size()) < kMaxContactsPerRecording)
        events.push_back({s.t_ms, recording.label});
      else
        break;
    }
    previous = s.contact;
  }
  return events;
}

Window::Window(std::vector<double> features_in, ClassLabel label_in, std::int64_t t_end_ms_in,
               WindowSource source_in)
    : features(std::move(features_in)), label(label_in), t_end_ms(t_end_ms_in),
      source(std::move(source_in)) {
  if (features.size() != static_cast<std::size_t>(kWindowRows * kFeatureCols))
    throw DataError("window must be " + std::to_string(kWindowRows) + "x" +
                    std::to_string(kFeatureCols) + ", got " + std::to_string(features.size()) +
                    " values");
  for (double x : features) {
    if (!std::isfinite(x)) throw DataError("window contains a non-finite value");
  }
}

}  // namespace contactsense
