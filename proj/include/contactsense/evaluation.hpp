#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "contactsense/inference.hpp"
#include "contactsense/preprocessing.hpp"
#include "contactsense/types.hpp"

namespace contactsense {

// Rows are true classes, columns predicted classes, indexed by ClassLabel.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  void add(ClassLabel truth, ClassLabel predicted) {
    counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)] += 1;
  }
  std::int64_t at(int truth, int predicted) const {
    return counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
  }
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int predicted) const;
};

struct EvalReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;  // trace / total
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> f1{};
  // Classes whose precision or recall had a zero denominator (value set to 0).
  std::array<bool, kNumClasses> zero_denominator{};
  std::string model_id;
  std::string dataset_id;
  std::string voting_desc;
};

// Standard multi-class metrics from (true, predicted) pairs.
// precision_c = diag_c / column-sum_c, recall_c = diag_c / row-sum_c,
// f1 = harmonic mean (0 when precision + recall == 0).
EvalReport score(const std::vector<std::pair<ClassLabel, ClassLabel>>& truth_predicted);
EvalReport score(const ConfusionMatrix& confusion);

std::string report_text(const EvalReport& report);         // percentages at 2 decimals
std::string report_csv(const EvalReport& report);
std::string confusion_csv(const ConfusionMatrix& confusion);

struct SweepEntry {
  std::string family;  // "gru" | "lstm" | "transformer"
  PreprocessingParams preprocessing;
  VotingConfig voting;
  double accuracy = 0.0;
  std::size_t dataset_size = 0;
};

// Table II-style grid plus a best-configuration row per model family.
std::string sweep_report_csv(const std::vector<SweepEntry>& entries);
std::string sweep_report_text(const std::vector<SweepEntry>& entries);

// Contact-level evaluation: stream each recording and score the per-contact
// decisions against the recording label. Incomplete decisions are skipped
// with a warning.
EvalReport evaluate_contact_level(const std::vector<Recording>& recordings,
                                  const ModelState& model, const PreprocessingParams& params,
                                  const VotingConfig& voting);

}  // namespace contactsense
