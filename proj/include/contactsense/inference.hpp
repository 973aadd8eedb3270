#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "contactsense/models.hpp"
#include "contactsense/preprocessing.hpp"
#include "contactsense/types.hpp"

namespace contactsense {

enum class VotingMethod { Hard, Soft };
enum class HardTieRule { MostRecent, LowestIndex };

const char* to_string(VotingMethod method);
VotingMethod voting_method_from_string(const std::string& name);

struct VotingConfig {
  VotingMethod method = VotingMethod::Hard;
  int n_p = 8;
  int n_p_min = 8;   // latency-bound endpoints
  int n_p_max = 15;
  int infer_every = 3;            // model runs every infer_every ticks
  double model_runtime_ms = 7.09; // average model runtime, latency model only
  HardTieRule tie_rule = HardTieRule::MostRecent;
  bool continuous = false;        // keep re-deciding after the buffer first fills

  void validate() const;
};

using ProbVector = std::array<double, kNumClasses>;

// Rolling buffer of the last n_p class-probability vectors, oldest evicted
// first.
class VoteBuffer {
 public:
  explicit VoteBuffer(int capacity);
  void push(const ProbVector& probs);
  bool full() const { return static_cast<int>(entries_.size()) == capacity_; }
  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  const std::deque<ProbVector>& entries() const { return entries_; }

 private:
  int capacity_;
  std::deque<ProbVector> entries_;
};

// Hard: mode of per-entry argmaxes, ties by rule (MostRecent: latest entry
// whose argmax is among the tied classes). Soft: argmax of the element-wise
// mean, ties to the lowest class index. Requires a full buffer.
ClassLabel vote(const VoteBuffer& buffer, VotingMethod method,
                HardTieRule tie_rule = HardTieRule::MostRecent);

// lambda = n_p * infer_every * T + model_runtime at n_p_min and n_p_max.
struct LatencyBounds {
  double min_ms = 0.0;
  double max_ms = 0.0;
};
LatencyBounds latency_bounds(const VotingConfig& config, double step_period_ms);

struct StreamDecision {
  int contact_index = 0;
  std::int64_t trigger_tick = 0;   // sample index of the contact edge
  std::int64_t decision_tick = 0;  // sample index at which the decision fired
  ClassLabel label = ClassLabel::Human;
  ProbVector mean_probs{};
  bool complete = false;
  std::string error;  // set when the recording ended before the buffer filled
};

struct StreamResult {
  std::vector<StreamDecision> decisions;
  double latency_ms = 0.0;  // n_p * infer_every * T + model_runtime
};

// Replay a recording on the 5 ms tick grid. After each contact trigger plus
// delta_offset, the model runs on the trailing 40-sample window every
// infer_every ticks; one decision fires per contact once n_p predictions
// accumulate, at tick trigger + delta_offset/5 + n_p*infer_every.
StreamResult stream_classify(const Recording& recording, const ModelState& model,
                             const PreprocessingParams& params, const VotingConfig& config);

// One line per decision: tick, contact index, label, mean probabilities,
// latency estimate.
std::string stream_result_csv(const StreamResult& result);

}  // namespace contactsense
