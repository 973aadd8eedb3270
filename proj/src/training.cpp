#include "contactsense/training.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <random>

#include "contactsense/errors.hpp"
#include "contactsense/log.hpp"

namespace contactsense {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x517cc1b727220a95ULL));
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw UsageError("learning_rate must be > 0");
  if (max_epochs < 1) throw UsageError("max_epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (early_stop_patience < 1) throw UsageError("early_stop_patience must be >= 1");
  if (l2_lambda < 0.0) throw UsageError("l2_lambda must be >= 0");
}

SplitPlan make_split(const LabeledDataset& dataset, std::uint64_t seed, int k_folds) {
  if (k_folds < 2) throw UsageError("make_split: k_folds must be >= 2");

  // Contact groups in deterministic (recording id, contact index) order.
  std::map<std::pair<std::string, int>, std::vector<int>> groups;
  for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
    const WindowSource& src = dataset.windows[i].source;
    groups[{src.recording_id, src.contact_index}].push_back(static_cast<int>(i));
  }
  if (groups.size() < 10)
    throw DataError("make_split: need at least 10 contact groups, got " +
                    std::to_string(groups.size()));

  std::vector<const std::vector<int>*> group_list;
  group_list.reserve(groups.size());
  for (const auto& [key, indices] : groups) group_list.push_back(&indices);

  std::vector<int> order(group_list.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const int n_groups = static_cast<int>(order.size());
  const int n_val_groups = std::max(1, n_groups / 10);

  SplitPlan plan;
  plan.folds.resize(static_cast<std::size_t>(k_folds));
  for (int g = 0; g < n_groups; ++g) {
    const std::vector<int>& windows = *group_list[static_cast<std::size_t>(order[g])];
    if (g < n_val_groups) {
      plan.val_indices.insert(plan.val_indices.end(), windows.begin(), windows.end());
    } else {
      const int train_pos = g - n_val_groups;
      plan.train_indices.insert(plan.train_indices.end(), windows.begin(), windows.end());
      auto& fold = plan.folds[static_cast<std::size_t>(train_pos % k_folds)];
      fold.insert(fold.end(), windows.begin(), windows.end());
    }
  }
  std::sort(plan.train_indices.begin(), plan.train_indices.end());
  std::sort(plan.val_indices.begin(), plan.val_indices.end());
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

void adamw_step(std::map<std::string, Tensor>& params,
                const std::map<std::string, Tensor>& grads, AdamWState& state, double lr,
                double weight_decay) {
  for (const auto& [name, grad] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) throw NumericError("adamw_step: unknown parameter \"" + name + "\"");
    if (it->second.shape() != grad.shape())
      throw NumericError("adamw_step: shape mismatch for \"" + name + "\": " +
                         it->second.shape_string() + " vs " + grad.shape_string());
    if (!grad.all_finite())
      throw NumericError("adamw_step: non-finite gradient for \"" + name + "\", step aborted");
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& m = state.m.try_emplace(name, Tensor(p.shape())).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.shape())).first->second;
    for (int i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon) + lr * weight_decay * p[i];
    }
  }
}

Tensor batch_features(const LabeledDataset& dataset, const std::vector<int>& indices) {
  const int batch = static_cast<int>(indices.size());
  Tensor x({batch, kWindowRows, kFeatureCols});
  for (int b = 0; b < batch; ++b) {
    const Window& w = dataset.windows[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
    std::copy(w.features.begin(), w.features.end(),
              x.data() + static_cast<std::size_t>(b) * kWindowRows * kFeatureCols);
  }
  return x;
}

std::vector<int> batch_targets(const LabeledDataset& dataset, const std::vector<int>& indices) {
  std::vector<int> targets;
  targets.reserve(indices.size());
  for (int i : indices)
    targets.push_back(static_cast<int>(dataset.windows[static_cast<std::size_t>(i)].label));
  return targets;
}

EvalLoss evaluate_windows(const ModelState& state, const LabeledDataset& dataset,
                          const std::vector<int>& indices, int batch_size) {
  if (indices.empty()) throw UsageError("evaluate_windows: no indices");
  double loss_sum = 0.0;
  int correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<int> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                 indices.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor probs = model_forward(state, batch_features(dataset, chunk), false);
    const std::vector<int> targets = batch_targets(dataset, chunk);
    for (int b = 0; b < static_cast<int>(chunk.size()); ++b) {
      int arg = 0;
      for (int c = 1; c < probs.dim(1); ++c)
        if (probs.at(b, c) > probs.at(b, arg)) arg = c;
      if (arg == targets[static_cast<std::size_t>(b)]) ++correct;
      const double p = std::max(probs.at(b, targets[static_cast<std::size_t>(b)]), 1e-300);
      loss_sum -= std::log(p);
    }
  }
  EvalLoss out;
  out.loss = loss_sum / static_cast<double>(indices.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  return out;
}

namespace {

double effective_weight_decay(const ModelSpec& spec, const TrainConfig& config) {
  if (config.l2_lambda > 0.0) return config.l2_lambda;
  if (const auto* tf = std::get_if<TransformerSpec>(&spec)) return tf->l2_lambda;
  return 0.0;
}

}  // namespace

TrainResult train_final(const LabeledDataset& dataset, const SplitPlan& split,
                        const ModelSpec& spec, const TrainConfig& config) {
  config.validate();
  if (split.train_indices.empty() || split.val_indices.empty())
    throw UsageError("train_final: split has an empty side");

  ModelState state = init_model(spec, config.seed);
  AdamWState opt;
  const double weight_decay = effective_weight_decay(spec, config);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  ModelState best = state;
  int epochs_since_improvement = 0;

  std::vector<int> order = split.train_indices;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double train_loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<int> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      try {
        Graph g(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), batch_index));
        const ParamVars params = make_param_vars(g, state);
        const VarId x = g.constant(batch_features(dataset, chunk));
        const VarId probs = model_forward_vars(g, state.spec, params, x, true);
        const VarId loss = g.nll_loss(g.log(probs), batch_targets(dataset, chunk));
        g.backward(loss);
        train_loss_sum += g.value(loss)[0] * static_cast<double>(chunk.size());

        std::map<std::string, Tensor> grads;
        for (const auto& [name, id] : params) grads.emplace(name, g.grad(id));
        adamw_step(state.parameters, grads, opt, config.learning_rate, weight_decay);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                           e.what());
      }
    }

    const EvalLoss val = evaluate_windows(state, dataset, split.val_indices);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_loss_sum / static_cast<double>(order.size());
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    result.curve.push_back(stats);
    log_info("epoch " + std::to_string(epoch) + " train_loss=" + std::to_string(stats.train_loss) +
             " val_loss=" + std::to_string(val.loss) +
             " val_acc=" + std::to_string(val.accuracy));

    if (val.loss < result.best_val_loss) {
      result.best_val_loss = val.loss;
      result.best_epoch = epoch;
      best = state;
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
      if (epochs_since_improvement >= config.early_stop_patience) break;
    }
  }

  result.state = std::move(best);
  return result;
}

ModelSpec apply_hyperparams(const ModelSpec& spec, const HyperParams& hp) {
  ModelSpec out = spec;
  if (auto* rnn = std::get_if<RnnSpec>(&out)) {
    for (const auto& [key, value] : hp) {
      if (key == "num_layers") rnn->num_layers = static_cast<int>(std::llround(value));
      else if (key == "hidden_size") rnn->hidden_size = static_cast<int>(std::llround(value));
      else if (key == "dropout_p") rnn->dropout_p = value;
    }
  } else {
    auto& tf = std::get<TransformerSpec>(out);
    for (const auto& [key, value] : hp) {
      if (key == "d_model") tf.d_model = static_cast<int>(std::llround(value));
      else if (key == "num_heads") tf.num_heads = static_cast<int>(std::llround(value));
      else if (key == "num_blocks") tf.num_blocks = static_cast<int>(std::llround(value));
      else if (key == "ffn_dim") tf.ffn_dim = static_cast<int>(std::llround(value));
      else if (key == "dropout_p") tf.dropout_p = value;
      else if (key == "l2_lambda") tf.l2_lambda = value;
    }
  }
  return out;
}

TrainConfig apply_hyperparams(const TrainConfig& config, const HyperParams& hp) {
  TrainConfig out = config;
  for (const auto& [key, value] : hp) {
    if (key == "learning_rate") out.learning_rate = value;
    else if (key == "batch_size") out.batch_size = static_cast<int>(std::llround(value));
    else if (key == "l2_lambda") out.l2_lambda = value;
  }
  return out;
}

namespace {

bool known_hyperparam(const ModelSpec& spec, const std::string& key) {
  static const char* train_keys[] = {"learning_rate", "batch_size", "l2_lambda"};
  for (const char* k : train_keys)
    if (key == k) return true;
  if (std::holds_alternative<RnnSpec>(spec))
    return key == "num_layers" || key == "hidden_size" || key == "dropout_p";
  return key == "d_model" || key == "num_heads" || key == "num_blocks" || key == "ffn_dim" ||
         key == "dropout_p";
}

std::vector<HyperParams> enumerate_grid(const std::map<std::string, std::vector<double>>& grid) {
  std::vector<HyperParams> combos;
  combos.push_back({});
  for (const auto& [key, values] : grid) {
    if (values.empty()) throw UsageError("grid key \"" + key + "\" has no candidates");
    std::vector<HyperParams> next;
    next.reserve(combos.size() * values.size());
    for (const HyperParams& base : combos)
      for (double v : values) {
        HyperParams hp = base;
        hp[key] = v;
        next.push_back(std::move(hp));
      }
    combos = std::move(next);
  }
  return combos;
}

}  // namespace

CrossValidationResult cross_validate(const LabeledDataset& dataset, const SplitPlan& split,
                                     const ModelSpec& spec, const TrainConfig& config) {
  config.validate();
  if (config.grid.empty()) throw UsageError("cross_validate: empty grid");
  for (const auto& [key, values] : config.grid)
    if (!known_hyperparam(spec, key))
      throw UsageError("cross_validate: unknown hyperparameter \"" + key + "\"");
  const int k = static_cast<int>(split.folds.size());
  for (const auto& fold : split.folds)
    if (fold.empty()) throw UsageError("cross_validate: empty fold");

  const std::vector<HyperParams> combos = enumerate_grid(config.grid);
  CrossValidationResult result;
  result.best_accuracy = -1.0;

  for (std::size_t ci = 0; ci < combos.size(); ++ci) {
    const HyperParams& hp = combos[ci];
    const ModelSpec combo_spec = apply_hyperparams(spec, hp);
    const TrainConfig combo_config = apply_hyperparams(config, hp);

    auto run_fold = [&, ci](int fold_index) -> double {
      SplitPlan sub;
      sub.val_indices = split.folds[static_cast<std::size_t>(fold_index)];
      for (int f = 0; f < k; ++f)
        if (f != fold_index)
          sub.train_indices.insert(sub.train_indices.end(),
                                   split.folds[static_cast<std::size_t>(f)].begin(),
                                   split.folds[static_cast<std::size_t>(f)].end());
      std::sort(sub.train_indices.begin(), sub.train_indices.end());
      TrainConfig fold_config = combo_config;
      fold_config.seed = derive_seed(config.seed, ci, static_cast<std::uint64_t>(fold_index));
      const TrainResult trained = train_final(dataset, sub, combo_spec, fold_config);
      return evaluate_windows(trained.state, dataset, sub.val_indices).accuracy;
    };

    ComboScore score;
    score.params = hp;
    try {
      std::vector<std::future<double>> futures;
      futures.reserve(static_cast<std::size_t>(k));
      for (int f = 0; f < k; ++f)
        futures.push_back(std::async(std::launch::async, run_fold, f));
      for (auto& fut : futures) score.fold_accuracies.push_back(fut.get());
      double sum = 0.0;
      for (double a : score.fold_accuracies) sum += a;
      score.mean_accuracy = sum / static_cast<double>(k);
    } catch (const NumericError& e) {
      log_warn("cross_validate: combination " + std::to_string(ci) + " diverged: " + e.what());
      score.fold_accuracies.assign(static_cast<std::size_t>(k), 0.0);
      score.mean_accuracy = 0.0;
    }

    if (score.mean_accuracy > result.best_accuracy) {
      result.best_accuracy = score.mean_accuracy;
      result.best = hp;
    }
    result.scores.push_back(std::move(score));
  }
  return result;
}

}  // namespace contactsense
