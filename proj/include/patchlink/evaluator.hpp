#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "patchlink/dataset.hpp"
#include "patchlink/ranker.hpp"

namespace patchlink {

struct RankedTruth {
  RankedResult result;
  std::vector<std::string> true_shas;

  // Position of the best-ranked true sha, 0 when none is among the candidates.
  std::size_t first_hit() const;
};

struct TopNRecall {
  double all = 0.0;         // hits / every result
  double found_only = 0.0;  // hits / results whose true sha is among the candidates
  std::size_t hits = 0;
  std::size_t total = 0;
  std::size_t found = 0;
};

// A result counts as a hit when any true sha sits at rank <= n. Throws
// Error{empty_results} for no results and Error{invalid_argument} for a
// result without true shas.
TopNRecall topn_recall(std::span<const RankedTruth> results, std::size_t n);

inline constexpr std::array<std::size_t, 4> kTopN = {1, 2, 3, 5};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationMetrics {
  std::map<int, ClassScores> per_class;  // every class seen in labels or predictions
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  bool skipped_zero_support = false;  // a predicted class with no true instances left out of macro means
};

// Precision is 0 for a class never predicted. Throws Error{empty_input} or
// Error{invalid_argument} for mismatched lengths.
ClassificationMetrics classification_metrics(std::span<const int> preds, std::span<const int> labels);

// Mann-Whitney: P(score_pos > score_neg) + 0.5 P(equal). Throws
// Error{single_class} unless both labels occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct ConfusionMatrix {
  std::vector<int> classes;
  std::vector<std::vector<std::size_t>> counts;  // [true][predicted]

  std::vector<std::vector<double>> normalized() const;  // rows sum to 1 (or are all 0)
  std::size_t row_sum(std::size_t i) const;
};

// Labels or predictions outside `classes` throw Error{invalid_argument}.
ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                 std::span<const int> classes);

struct MetricBlock {
  std::size_t rows = 0;
  std::size_t positives = 0;
  ClassificationMetrics vfc;  // binary, threshold 0.5
  bool has_auc = false;
  double auc = 0.0;
};

struct EvalReport {
  std::map<std::size_t, TopNRecall> topn;
  MetricBlock overall;
  ConfusionMatrix type_confusion;  // true OWASP class x predicted, over VFC rows
  ClassificationMetrics type_metrics;
  std::map<std::string, MetricBlock> per_language;
  std::size_t units = 0;  // (advisory, fixed version) windows ranked
};

// Scores `rows` with the mean probability of `models`, ranks every
// (advisory, fixed version) window and fills the report. Windows without a
// labelled VFC are left out of the Top-N figures.
EvalReport evaluate(std::span<const RankModel> models, std::span<const LabeledRow> rows);

// One RankedTruth per (advisory, fixed version) window that has a VFC.
std::vector<RankedTruth> rank_windows(std::span<const RankModel> models, std::span<const LabeledRow> rows);

std::string report_to_json(const EvalReport& report);
// `name value` lines, sorted, for diffing in CI.
std::string report_to_metrics_text(const EvalReport& report);

}  // namespace patchlink
