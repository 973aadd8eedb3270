#include "contactsense/inference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "contactsense/errors.hpp"

namespace contactsense {

const char* to_string(VotingMethod method) {
  return method == VotingMethod::Hard ? "hard" : "soft";
}

VotingMethod voting_method_from_string(const std::string& name) {
  if (name == "hard") return VotingMethod::Hard;
  if (name == "soft") return VotingMethod::Soft;
  throw UsageError("unknown voting method: \"" + name + "\" (expected hard|soft)");
}

void VotingConfig::validate() const {
  if (n_p < 1) throw UsageError("voting: n_p must be >= 1");
  if (infer_every < 1) throw UsageError("voting: infer_every must be >= 1");
  if (n_p_min < 1 || n_p_max < n_p_min) throw UsageError("voting: bad n_p bounds");
  if (model_runtime_ms < 0.0) throw UsageError("voting: model_runtime_ms must be >= 0");
}

VoteBuffer::VoteBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw UsageError("VoteBuffer: capacity must be >= 1");
}

void VoteBuffer::push(const ProbVector& probs) {
  if (full()) entries_.pop_front();
  entries_.push_back(probs);
}

namespace {

int argmax(const ProbVector& probs) {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c)
    if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)]) best = c;
  return best;
}

}  // namespace

ClassLabel vote(const VoteBuffer& buffer, VotingMethod method, HardTieRule tie_rule) {
  if (!buffer.full())
    throw UsageError("vote: insufficient predictions (" + std::to_string(buffer.size()) + " of " +
                     std::to_string(buffer.capacity()) + ")");

  if (method == VotingMethod::Soft) {
    ProbVector mean{};
    for (const ProbVector& p : buffer.entries())
      for (int c = 0; c < kNumClasses; ++c) mean[static_cast<std::size_t>(c)] += p[static_cast<std::size_t>(c)];
    // Ties resolve to the lowest class index via strict > in argmax.
    return static_cast<ClassLabel>(argmax(mean));
  }

  std::array<int, kNumClasses> counts{};
  std::vector<int> votes;
  votes.reserve(buffer.entries().size());
  for (const ProbVector& p : buffer.entries()) {
    const int v = argmax(p);
    votes.push_back(v);
    counts[static_cast<std::size_t>(v)] += 1;
  }
  const int top = *std::max_element(counts.begin(), counts.end());

  if (tie_rule == HardTieRule::LowestIndex) {
    for (int c = 0; c < kNumClasses; ++c)
      if (counts[static_cast<std::size_t>(c)] == top) return static_cast<ClassLabel>(c);
  }
  // MostRecent: newest vote whose class is tied at the top count.
  for (auto it = votes.rbegin(); it != votes.rend(); ++it)
    if (counts[static_cast<std::size_t>(*it)] == top) return static_cast<ClassLabel>(*it);
  return static_cast<ClassLabel>(votes.back());  // unreachable
}

LatencyBounds latency_bounds(const VotingConfig& config, double step_period_ms) {
  config.validate();
  if (step_period_ms <= 0.0) throw UsageError("latency_bounds: step period must be > 0");
  LatencyBounds bounds;
  bounds.min_ms = config.n_p_min * config.infer_every * step_period_ms + config.model_runtime_ms;
  bounds.max_ms = config.n_p_max * config.infer_every * step_period_ms + config.model_runtime_ms;
  return bounds;
}

StreamResult stream_classify(const Recording& recording, const ModelState& model,
                             const PreprocessingParams& params, const VotingConfig& config) {
  params.validate();
  config.validate();
  const std::vector<ContactEvent> contacts = detect_contacts(recording);
  if (contacts.empty()) throw DataError("stream_classify: recording has no contacts");

  StreamResult result;
  result.latency_ms =
      config.n_p * config.infer_every * static_cast<double>(recording.period_ms) +
      config.model_runtime_ms;

  const std::int64_t last_tick = static_cast<std::int64_t>(recording.samples.size()) - 1;
  const std::int64_t offset_ticks = params.delta_offset_ms / recording.period_ms;

  for (std::size_t ci = 0; ci < contacts.size(); ++ci) {
    const std::int64_t trigger_tick = recording.sample_index(contacts[ci].t_contact_ms);
    const std::int64_t base_tick = trigger_tick + offset_ticks;

    StreamDecision decision;
    decision.contact_index = static_cast<int>(ci);
    decision.trigger_tick = trigger_tick;

    VoteBuffer buffer(config.n_p);
    bool decided = false;
    // The model runs at every infer_every-th tick after the offset point;
    // the n_p-th run lands at base + n_p*infer_every.
    for (std::int64_t tick = base_tick + config.infer_every; tick <= last_tick;
         tick += config.infer_every) {
      const std::int64_t t_end = recording.samples[static_cast<std::size_t>(tick)].t_ms;
      std::vector<double> features;
      try {
        features = build_feature_matrix(recording, t_end, params.zero_velocity_error);
      } catch (const DataError& e) {
        decision.error = e.what();
        break;
      }
      const Tensor probs =
          model_forward(model, Tensor({1, kWindowRows, kFeatureCols}, std::move(features)), false);
      buffer.push({probs[0], probs[1], probs[2]});

      if (buffer.full()) {
        decision.decision_tick = tick;
        decision.label = vote(buffer, config.method, config.tie_rule);
        ProbVector mean{};
        for (const ProbVector& p : buffer.entries())
          for (int c = 0; c < kNumClasses; ++c)
            mean[static_cast<std::size_t>(c)] +=
                p[static_cast<std::size_t>(c)] / static_cast<double>(config.n_p);
        decision.mean_probs = mean;
        decision.complete = true;
        result.decisions.push_back(decision);
        decided = true;
        if (!config.continuous) break;
      }
    }
    if (!decided) {
      if (decision.error.empty())
        decision.error = "recording ended before " + std::to_string(config.n_p) +
                         " predictions accumulated";
      result.decisions.push_back(decision);
    }
  }
  return result;
}

std::string stream_result_csv(const StreamResult& result) {
  std::ostringstream out;
  out << "decision_tick,contact_index,label,p_human,p_aluminum,p_pvc,latency_ms,complete,error\n";
  out.setf(std::ios::fixed);
  for (const StreamDecision& d : result.decisions) {
    out.precision(6);
    out << d.decision_tick << ',' << d.contact_index << ',' << (d.complete ? to_string(d.label) : "")
        << ',' << d.mean_probs[0] << ',' << d.mean_probs[1] << ',' << d.mean_probs[2] << ',';
    out.precision(2);
    out << result.latency_ms << ',' << (d.complete ? 1 : 0) << ',' << d.error << '\n';
  }
  return out.str();
}

}  // namespace contactsense
