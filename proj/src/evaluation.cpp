#include "contactsense/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "contactsense/errors.hpp"
#include "contactsense/log.hpp"

namespace contactsense {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts)
    for (std::int64_t c : row) n += c;
  return n;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t n = 0;
  for (int i = 0; i < kNumClasses; ++i) n += at(i, i);
  return n;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t n = 0;
  for (int j = 0; j < kNumClasses; ++j) n += at(truth, j);
  return n;
}

std::int64_t ConfusionMatrix::col_sum(int predicted) const {
  std::int64_t n = 0;
  for (int i = 0; i < kNumClasses; ++i) n += at(i, predicted);
  return n;
}

EvalReport score(const ConfusionMatrix& confusion) {
  const std::int64_t total = confusion.total();
  if (total == 0) throw DataError("score: no predictions");

  EvalReport report;
  report.confusion = confusion;
  report.accuracy = static_cast<double>(confusion.trace()) / static_cast<double>(total);
  for (int c = 0; c < kNumClasses; ++c) {
    const std::int64_t diag = confusion.at(c, c);
    const std::int64_t col = confusion.col_sum(c);
    const std::int64_t row = confusion.row_sum(c);
    if (col == 0) {
      report.precision[static_cast<std::size_t>(c)] = 0.0;
      report.zero_denominator[static_cast<std::size_t>(c)] = true;
    } else {
      report.precision[static_cast<std::size_t>(c)] =
          static_cast<double>(diag) / static_cast<double>(col);
    }
    if (row == 0) {
      report.recall[static_cast<std::size_t>(c)] = 0.0;
      report.zero_denominator[static_cast<std::size_t>(c)] = true;
    } else {
      report.recall[static_cast<std::size_t>(c)] =
          static_cast<double>(diag) / static_cast<double>(row);
    }
    const double p = report.precision[static_cast<std::size_t>(c)];
    const double r = report.recall[static_cast<std::size_t>(c)];
    report.f1[static_cast<std::size_t>(c)] = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  return report;
}

EvalReport score(const std::vector<std::pair<ClassLabel, ClassLabel>>& truth_predicted) {
  if (truth_predicted.empty()) throw DataError("score: no predictions");
  ConfusionMatrix confusion;
  for (const auto& [truth, predicted] : truth_predicted) confusion.add(truth, predicted);
  return score(confusion);
}

namespace {

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * fraction);
  return buf;
}

const char* class_name(int c) { return to_string(static_cast<ClassLabel>(c)); }

}  // namespace

std::string report_text(const EvalReport& report) {
  std::ostringstream out;
  if (!report.model_id.empty()) out << "model: " << report.model_id << '\n';
  if (!report.dataset_id.empty()) out << "dataset: " << report.dataset_id << '\n';
  if (!report.voting_desc.empty()) out << "voting: " << report.voting_desc << '\n';
  out << "accuracy: " << percent(report.accuracy) << '\n';
  out << "confusion (rows true, cols predicted):\n";
  out << "            ";
  for (int j = 0; j < kNumClasses; ++j) out << class_name(j) << '\t';
  out << '\n';
  for (int i = 0; i < kNumClasses; ++i) {
    out << std::string(class_name(i)) << std::string(12 - std::string(class_name(i)).size(), ' ');
    for (int j = 0; j < kNumClasses; ++j) out << report.confusion.at(i, j) << '\t';
    out << '\n';
  }
  out << "class        precision recall   f1\n";
  for (int c = 0; c < kNumClasses; ++c) {
    out << std::string(class_name(c)) << std::string(12 - std::string(class_name(c)).size(), ' ')
        << ' ' << percent(report.precision[static_cast<std::size_t>(c)]) << "    "
        << percent(report.recall[static_cast<std::size_t>(c)]) << "   "
        << percent(report.f1[static_cast<std::size_t>(c)]);
    if (report.zero_denominator[static_cast<std::size_t>(c)]) out << " (zero denominator)";
    out << '\n';
  }
  return out.str();
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "class,precision,recall,f1,zero_denominator\n";
  char buf[128];
  for (int c = 0; c < kNumClasses; ++c) {
    std::snprintf(buf, sizeof(buf), "%s,%.2f,%.2f,%.2f,%d\n", class_name(c),
                  100.0 * report.precision[static_cast<std::size_t>(c)],
                  100.0 * report.recall[static_cast<std::size_t>(c)],
                  100.0 * report.f1[static_cast<std::size_t>(c)],
                  report.zero_denominator[static_cast<std::size_t>(c)] ? 1 : 0);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "overall_accuracy,%.2f,,,\n", 100.0 * report.accuracy);
  out << buf;
  return out.str();
}

std::string confusion_csv(const ConfusionMatrix& confusion) {
  std::ostringstream out;
  out << "true\\predicted";
  for (int j = 0; j < kNumClasses; ++j) out << ',' << class_name(j);
  out << '\n';
  for (int i = 0; i < kNumClasses; ++i) {
    out << class_name(i);
    for (int j = 0; j < kNumClasses; ++j) out << ',' << confusion.at(i, j);
    out << '\n';
  }
  return out.str();
}

namespace {

std::string sweep_key(const SweepEntry& e) {
  std::ostringstream out;
  out << to_string(e.preprocessing.mode) << ",offset=" << e.preprocessing.delta_offset_ms;
  if (e.preprocessing.mode == WindowMode::Sliding)
    out << ",step=" << e.preprocessing.delta_step_samples;
  out << ',' << to_string(e.voting.method) << ",np=" << e.voting.n_p;
  return out.str();
}

}  // namespace

std::string sweep_report_csv(const std::vector<SweepEntry>& entries) {
  if (entries.empty()) throw DataError("sweep_report: no entries");
  std::ostringstream out;
  out << "family,mode,delta_offset_ms,delta_step,voting,n_p,dataset_size,accuracy,best\n";

  // Best accuracy per family; all tied rows marked.
  std::map<std::string, double> best;
  for (const SweepEntry& e : entries) {
    auto [it, inserted] = best.try_emplace(e.family, e.accuracy);
    if (!inserted) it->second = std::max(it->second, e.accuracy);
  }
  char buf[64];
  for (const SweepEntry& e : entries) {
    out << e.family << ',' << to_string(e.preprocessing.mode) << ','
        << e.preprocessing.delta_offset_ms << ',';
    if (e.preprocessing.mode == WindowMode::Sliding) out << e.preprocessing.delta_step_samples;
    out << ',' << to_string(e.voting.method) << ',' << e.voting.n_p << ',' << e.dataset_size
        << ',';
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * e.accuracy);
    out << buf << ',' << (e.accuracy == best[e.family] ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string sweep_report_text(const std::vector<SweepEntry>& entries) {
  if (entries.empty()) throw DataError("sweep_report: no entries");
  std::map<std::string, const SweepEntry*> best;
  for (const SweepEntry& e : entries) {
    auto [it, inserted] = best.try_emplace(e.family, &e);
    if (!inserted && e.accuracy > it->second->accuracy) it->second = &e;
  }

  std::ostringstream out;
  out << "configuration results:\n";
  for (const SweepEntry& e : entries) {
    out << "  " << e.family << " [" << sweep_key(e) << "] size=" << e.dataset_size
        << " accuracy=" << percent(e.accuracy);
    if (e.accuracy == best[e.family]->accuracy) out << "  <-- best " << e.family;
    out << '\n';
  }
  out << "best per family:\n";
  for (const auto& [family, entry] : best) {
    out << "  " << family << ": " << percent(entry->accuracy) << " @ offset="
        << entry->preprocessing.delta_offset_ms << "ms";
    if (entry->preprocessing.mode == WindowMode::Sliding)
      out << ", step=" << entry->preprocessing.delta_step_samples;
    else
      out << ", fixed";
    out << ", " << to_string(entry->voting.method) << " voting, n_p=" << entry->voting.n_p
        << '\n';
  }
  return out.str();
}

EvalReport evaluate_contact_level(const std::vector<Recording>& recordings,
                                  const ModelState& model, const PreprocessingParams& params,
                                  const VotingConfig& voting) {
  std::vector<std::pair<ClassLabel, ClassLabel>> pairs;
  int incomplete = 0;
  for (const Recording& recording : recordings) {
    const StreamResult result = stream_classify(recording, model, params, voting);
    for (const StreamDecision& d : result.decisions) {
      if (!d.complete) {
        ++incomplete;
        continue;
      }
      pairs.emplace_back(recording.label, d.label);
    }
  }
  if (incomplete > 0)
    log_warn("evaluate_contact_level: skipped " + std::to_string(incomplete) +
             " incomplete decisions");
  EvalReport report = score(pairs);
  report.voting_desc = std::string(to_string(voting.method)) + " n_p=" + std::to_string(voting.n_p);
  return report;
}

}  // namespace contactsense
