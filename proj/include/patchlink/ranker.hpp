#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchlink/features.hpp"

namespace patchlink {

struct RankParams {
  double learning_rate = 0.001;
  std::uint32_t max_depth = 4;
  std::uint32_t rounds = 1500;
  double l2_lambda = 1.0;
  double min_child_weight = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const RankParams&) const = default;
};

struct TreeNode {
  std::int32_t feature = -1;
  double threshold = 0.0;  // rows with x[feature] < threshold go left
  std::int32_t left = -1;
  std::int32_t right = -1;
  double leaf = 0.0;
  bool is_leaf = true;
  bool default_left = true;  // kept for format compatibility; inputs are never missing

  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at 0, children after parents

  double output(const FeatureArray& x) const;
  std::size_t depth() const;
  bool operator==(const Tree&) const = default;
};

struct RankModel {
  RankParams params;
  double base_score = 0.0;  // logit
  std::vector<Tree> trees;
  std::vector<std::string> feature_names;

  double margin(const FeatureArray& x) const;
  double predict(const FeatureArray& x) const;
  double predict(const FeatureVector& fv) const { return predict(fv.values()); }
  bool operator==(const RankModel&) const = default;
};

// Model that returns sigmoid(logit) for every input.
RankModel constant_model(double logit, const RankParams& params = {});

struct FeatureMatrix {
  std::vector<FeatureArray> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return x.size(); }
  void add(const FeatureArray& row, int label) {
    x.push_back(row);
    y.push_back(label);
  }
};

struct TrainLog {
  std::vector<double> loss;  // mean training log-loss after k rounds, k = 0..rounds
  bool degenerate = false;   // single-label data: constant model, no trees
};

// Splits must improve the regularised objective by more than this.
inline constexpr double kMinSplitGain = 1e-10;

struct SplitChoice {
  bool found = false;
  std::int32_t feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// 0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)]
double split_gain(double gl, double hl, double gr, double hr, double lambda) noexcept;

// Exact greedy search over the given rows: every feature, every midpoint
// between consecutive distinct values, both children with hessian sum >=
// min_child_weight. Ties keep the lowest feature, then the lowest threshold.
SplitChoice best_split(std::span<const FeatureArray> x, std::span<const double> grad, std::span<const double> hess,
                       std::span<const std::size_t> rows, const RankParams& params);

// Newton boosting on the logistic loss: g = p - y, h = p(1 - p), leaf value
// -G/(H + lambda) times the learning rate, trees grown level-wise to
// max_depth. Rows are put in a canonical order first, so the model does not
// depend on input row order. Throws Error{empty_input} for no rows.
RankModel train(const FeatureMatrix& data, const RankParams& params, TrainLog* log = nullptr);

double mean_log_loss(const RankModel& model, const FeatureMatrix& data);

struct RankedEntry {
  std::string sha;
  double probability = 0.0;
  FeatureVector features;
  std::size_t rank_position = 0;
};

struct RankedResult {
  std::string advisory_id;
  std::vector<RankedEntry> entries;  // probability non-increasing
};

using Candidate = std::pair<std::string, FeatureVector>;

// Sorted by probability (descending), then later commits first, then sha.
RankedResult rank(const RankModel& model, std::string_view advisory_id, std::span<const Candidate> candidates);
// Same ordering over entries whose probabilities are already filled in.
RankedResult rank_scored(std::string_view advisory_id, std::vector<RankedEntry> entries);

// Mean probability over several models (fold ensembles).
double predict_mean(std::span<const RankModel> models, const FeatureArray& x);

// Mean increase in log-loss when one column is shuffled, over `repeats`
// seeded shuffles; one entry per feature.
FeatureArray permutation_importance(const RankModel& model, const FeatureMatrix& data, std::uint64_t seed,
                                    std::size_t repeats = 5);

inline constexpr int kModelFormatVersion = 1;

// Compact JSON document; the file form appends "checksum <16 hex>" over it.
std::string serialize_model(const RankModel& model);
std::string model_file_contents(const RankModel& model);
// Throws Error{corrupt_model} on checksum or structure problems and
// Error{version_mismatch} for another format_version.
RankModel parse_model_file(std::string_view contents);

void save_model(const RankModel& model, const std::filesystem::path& path);
RankModel load_model(const std::filesystem::path& path);

}  // namespace patchlink
