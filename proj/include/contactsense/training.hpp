#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "contactsense/models.hpp"
#include "contactsense/preprocessing.hpp"

namespace contactsense {

struct TrainConfig {
  double learning_rate = 0.01;
  int max_epochs = 150;
  int batch_size = 32;
  int early_stop_patience = 10;
  double l2_lambda = 0.0;  // decoupled weight decay; 0 defers to a transformer spec's l2_lambda
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> grid;

  void validate() const;
};

// Contact-group split: every window of one physical contact lands on the
// same side of every boundary. Indices refer to dataset.windows.
struct SplitPlan {
  std::vector<int> train_indices;
  std::vector<int> val_indices;
  std::vector<std::vector<int>> folds;  // k disjoint partitions of train_indices
};

// Deterministic 9:1 group split plus k folds whose group counts differ by at
// most one. Requires >= 10 distinct contact groups.
SplitPlan make_split(const LabeledDataset& dataset, std::uint64_t seed, int k_folds = 5);

struct AdamWState {
  int step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One decoupled-weight-decay Adam update with bias correction, in place.
// Throws NumericError (before touching params) on non-finite gradients.
void adamw_step(std::map<std::string, Tensor>& params,
                const std::map<std::string, Tensor>& grads, AdamWState& state, double lr,
                double weight_decay);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  ModelState state;  // best-validation-loss snapshot
  std::vector<EpochStats> curve;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

// Train on the 90% side, monitor validation loss every epoch, stop after
// `early_stop_patience` epochs without improvement, return the best snapshot.
TrainResult train_final(const LabeledDataset& dataset, const SplitPlan& split,
                        const ModelSpec& spec, const TrainConfig& config);

using HyperParams = std::map<std::string, double>;

// Spec/config with one grid combination applied. Known keys: learning_rate,
// batch_size, l2_lambda, and per-family spec fields (num_layers, hidden_size,
// dropout_p, d_model, num_heads, num_blocks, ffn_dim).
ModelSpec apply_hyperparams(const ModelSpec& spec, const HyperParams& hp);
TrainConfig apply_hyperparams(const TrainConfig& config, const HyperParams& hp);

struct ComboScore {
  HyperParams params;
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
};

struct CrossValidationResult {
  HyperParams best;
  double best_accuracy = 0.0;
  std::vector<ComboScore> scores;  // one entry per grid combination, enumeration order
};

// Grid search with k-fold cross validation over the training side of the
// split. Combinations are enumerated in lexicographic key/candidate order;
// ties keep the earliest combination. A diverging combination scores 0.
CrossValidationResult cross_validate(const LabeledDataset& dataset, const SplitPlan& split,
                                     const ModelSpec& spec, const TrainConfig& config);

// Batch helpers.
Tensor batch_features(const LabeledDataset& dataset, const std::vector<int>& indices);
std::vector<int> batch_targets(const LabeledDataset& dataset, const std::vector<int>& indices);

// Mean cross-entropy and window accuracy of a model over dataset indices.
struct EvalLoss {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalLoss evaluate_windows(const ModelState& state, const LabeledDataset& dataset,
                          const std::vector<int>& indices, int batch_size = 256);

}  // namespace contactsense
