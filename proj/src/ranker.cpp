#include "patchlink/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"
#include "patchlink/vfc_scorer.hpp"

namespace patchlink {

using json = nlohmann::json;

namespace {

constexpr double kLabelClamp = 1e-6;

double logit(double p) {
  p = std::clamp(p, kLabelClamp, 1.0 - kLabelClamp);
  return std::log(p / (1.0 - p));
}

double log_loss(double margin, int y) {
  // log(1 + e^m) - y m, computed without overflow
  const double softplus = margin > 0 ? margin + std::log1p(std::exp(-margin)) : std::log1p(std::exp(margin));
  return softplus - static_cast<double>(y) * margin;
}

struct NodeStats {
  double g = 0.0;
  double h = 0.0;
};

// Level-wise exact split search. `orders[f]` lists candidate rows sorted by
// feature f (ties in canonical row order); `node_of[r]` is the node a row
// currently sits in, or -1 when the row takes no part in this level.
void search_level(std::span<const FeatureArray> x, std::span<const double> grad, std::span<const double> hess,
                  const std::array<std::vector<std::size_t>, kFeatureCount>& orders,
                  std::span<const std::int32_t> node_of, std::span<const NodeStats> stats,
                  std::span<const char> active, const RankParams& params, std::span<SplitChoice> best) {
  struct Scan {
    double gl = 0.0;
    double hl = 0.0;
    double last = 0.0;
    bool has_last = false;
  };
  std::vector<Scan> scan(stats.size());
  const double lambda = params.l2_lambda;

  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::fill(scan.begin(), scan.end(), Scan{});
    for (std::size_t r : orders[f]) {
      const std::int32_t k = node_of[r];
      if (k < 0 || !active[static_cast<std::size_t>(k)]) continue;
      Scan& s = scan[static_cast<std::size_t>(k)];
      const NodeStats& total = stats[static_cast<std::size_t>(k)];
      const double v = x[r][f];
      if (s.has_last && v != s.last) {
        const double gr = total.g - s.gl;
        const double hr = total.h - s.hl;
        if (s.hl >= params.min_child_weight && hr >= params.min_child_weight) {
          const double gain = split_gain(s.gl, s.hl, gr, hr, lambda);
          SplitChoice& b = best[static_cast<std::size_t>(k)];
          if (gain > kMinSplitGain && (!b.found || gain > b.gain)) {
            double threshold = s.last + (v - s.last) / 2.0;
            if (!(threshold > s.last)) threshold = v;
            b = SplitChoice{true, static_cast<std::int32_t>(f), threshold, gain};
          }
        }
      }
      s.gl += grad[r];
      s.hl += hess[r];
      s.last = v;
      s.has_last = true;
    }
  }
}

std::array<std::vector<std::size_t>, kFeatureCount> sorted_orders(std::span<const FeatureArray> x,
                                                                  std::span<const std::size_t> rows) {
  std::array<std::vector<std::size_t>, kFeatureCount> orders;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    orders[f].assign(rows.begin(), rows.end());
    std::stable_sort(orders[f].begin(), orders[f].end(),
                     [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
  }
  return orders;
}

Tree grow_tree(std::span<const FeatureArray> x, std::span<const double> grad, std::span<const double> hess,
               const std::array<std::vector<std::size_t>, kFeatureCount>& orders, const RankParams& params,
               std::vector<std::int32_t>& node_of) {
  const std::size_t n = x.size();
  Tree tree;
  tree.nodes.emplace_back();
  std::fill(node_of.begin(), node_of.end(), 0);

  std::vector<NodeStats> stats(1);
  for (std::size_t r = 0; r < n; ++r) {
    stats[0].g += grad[r];
    stats[0].h += hess[r];
  }
  std::vector<std::int32_t> frontier{0};

  for (std::uint32_t depth = 0; depth < params.max_depth && !frontier.empty(); ++depth) {
    std::vector<char> active(tree.nodes.size(), 0);
    for (auto k : frontier) active[static_cast<std::size_t>(k)] = 1;
    std::vector<SplitChoice> best(tree.nodes.size());
    search_level(x, grad, hess, orders, node_of, stats, active, params, best);

    std::vector<std::int32_t> next;
    for (auto k : frontier) {
      const SplitChoice& b = best[static_cast<std::size_t>(k)];
      if (!b.found) continue;
      const auto left = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[static_cast<std::size_t>(k)];
      node.is_leaf = false;
      node.feature = b.feature;
      node.threshold = b.threshold;
      node.left = left;
      node.right = left + 1;
      node.default_left = true;
      next.push_back(left);
      next.push_back(left + 1);
    }
    if (next.empty()) break;

    stats.resize(tree.nodes.size());
    for (auto k : next) stats[static_cast<std::size_t>(k)] = {};
    for (std::size_t r = 0; r < n; ++r) {
      const TreeNode& node = tree.nodes[static_cast<std::size_t>(node_of[r])];
      if (node.is_leaf) continue;
      const std::int32_t child = x[r][static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
      node_of[r] = child;
      stats[static_cast<std::size_t>(child)].g += grad[r];
      stats[static_cast<std::size_t>(child)].h += hess[r];
    }
    frontier = std::move(next);
  }

  for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
    TreeNode& node = tree.nodes[k];
    if (!node.is_leaf) continue;
    node.leaf = -stats[k].g / (stats[k].h + params.l2_lambda) * params.learning_rate;
  }
  return tree;
}

void validate_model(const RankModel& m) {
  if (m.feature_names.size() != kFeatureCount) throw Error(Errc::corrupt_model, "model must name 7 features");
  if (m.trees.size() > m.params.rounds) throw Error(Errc::corrupt_model, "more trees than boosting rounds");
  if (!std::isfinite(m.base_score)) throw Error(Errc::corrupt_model, "non-finite base score");
  for (const auto& t : m.trees) {
    if (t.nodes.empty()) throw Error(Errc::corrupt_model, "empty tree");
    for (std::size_t k = 0; k < t.nodes.size(); ++k) {
      const TreeNode& node = t.nodes[k];
      if (node.is_leaf) {
        if (!std::isfinite(node.leaf)) throw Error(Errc::corrupt_model, "non-finite leaf value");
        continue;
      }
      const auto size = static_cast<std::int32_t>(t.nodes.size());
      if (node.feature < 0 || node.feature >= static_cast<std::int32_t>(kFeatureCount))
        throw Error(Errc::corrupt_model, "feature index out of range");
      if (node.left <= static_cast<std::int32_t>(k) || node.right <= static_cast<std::int32_t>(k) ||
          node.left >= size || node.right >= size)
        throw Error(Errc::corrupt_model, "tree children must follow their parent");
    }
    if (t.depth() > m.params.max_depth) throw Error(Errc::corrupt_model, "tree deeper than max_depth");
  }
}

}  // namespace

double Tree::output(const FeatureArray& x) const {
  std::size_t k = 0;
  while (!nodes[k].is_leaf) {
    const TreeNode& node = nodes[k];
    k = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right);
  }
  return nodes[k].leaf;
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    deepest = std::max(deepest, d[k]);
    if (!nodes[k].is_leaf) {
      d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
      d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
    }
  }
  return deepest;
}

double RankModel::margin(const FeatureArray& x) const {
  double m = base_score;
  for (const auto& t : trees) m += t.output(x);
  return m;
}

double RankModel::predict(const FeatureArray& x) const { return sigmoid(margin(x)); }

RankModel constant_model(double logit_value, const RankParams& params) {
  RankModel m;
  m.params = params;
  m.base_score = logit_value;
  m.feature_names.assign(kFeatureNames.begin(), kFeatureNames.end());
  return m;
}

double split_gain(double gl, double hl, double gr, double hr, double lambda) noexcept {
  const double g = gl + gr;
  const double h = hl + hr;
  return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda));
}

SplitChoice best_split(std::span<const FeatureArray> x, std::span<const double> grad, std::span<const double> hess,
                       std::span<const std::size_t> rows, const RankParams& params) {
  std::vector<std::int32_t> node_of(x.size(), -1);
  NodeStats total;
  for (std::size_t r : rows) {
    node_of[r] = 0;
    total.g += grad[r];
    total.h += hess[r];
  }
  const auto orders = sorted_orders(x, rows);
  std::vector<NodeStats> stats{total};
  std::vector<char> active{1};
  std::vector<SplitChoice> best(1);
  search_level(x, grad, hess, orders, node_of, stats, active, params, best);
  return best[0];
}

RankModel train(const FeatureMatrix& data, const RankParams& params, TrainLog* log) {
  if (data.x.empty()) throw Error(Errc::empty_input, "no training rows");
  if (data.x.size() != data.y.size()) throw Error(Errc::invalid_argument, "features and labels differ in length");

  // Canonical row order.
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    if (data.x[a] != data.x[b]) return data.x[a] < data.x[b];
    return data.y[a] < data.y[b];
  });
  std::vector<FeatureArray> x(data.size());
  std::vector<int> y(data.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    x[i] = data.x[perm[i]];
    y[i] = data.y[perm[i]];
  }

  const double positives = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double n = static_cast<double>(y.size());
  RankModel model = constant_model(logit(positives / n), params);

  std::vector<double> margin(y.size(), model.base_score);
  auto mean_loss = [&] {
    double s = 0.0;
    for (std::size_t r = 0; r < y.size(); ++r) s += log_loss(margin[r], y[r]);
    return s / n;
  };
  if (log) {
    log->loss.clear();
    log->degenerate = false;
    log->loss.push_back(mean_loss());
  }
  if (positives == 0.0 || positives == n) {
    if (log) log->degenerate = true;
    return model;
  }

  std::vector<std::size_t> all(y.size());
  std::iota(all.begin(), all.end(), 0);
  const auto orders = sorted_orders(x, all);
  std::vector<double> grad(y.size()), hess(y.size());
  std::vector<std::int32_t> node_of(y.size(), 0);

  model.trees.reserve(params.rounds);
  for (std::uint32_t round = 0; round < params.rounds; ++round) {
    for (std::size_t r = 0; r < y.size(); ++r) {
      const double p = sigmoid(margin[r]);
      grad[r] = p - static_cast<double>(y[r]);
      hess[r] = std::max(p * (1.0 - p), 1e-16);
    }
    Tree tree = grow_tree(x, grad, hess, orders, params, node_of);
    for (std::size_t r = 0; r < y.size(); ++r) margin[r] += tree.nodes[static_cast<std::size_t>(node_of[r])].leaf;
    model.trees.push_back(std::move(tree));
    if (log) log->loss.push_back(mean_loss());
  }
  return model;
}

double mean_log_loss(const RankModel& model, const FeatureMatrix& data) {
  if (data.x.empty()) throw Error(Errc::empty_input, "no rows");
  double s = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) s += log_loss(model.margin(data.x[r]), data.y[r]);
  return s / static_cast<double>(data.size());
}

RankedResult rank_scored(std::string_view advisory_id, std::vector<RankedEntry> entries) {
  RankedResult result;
  result.advisory_id = std::string(advisory_id);
  result.entries = std::move(entries);
  std::sort(result.entries.begin(), result.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    if (a.features.commit_rank_norm != b.features.commit_rank_norm)
      return a.features.commit_rank_norm > b.features.commit_rank_norm;
    return a.sha < b.sha;
  });
  for (std::size_t i = 0; i < result.entries.size(); ++i) result.entries[i].rank_position = i + 1;
  return result;
}

RankedResult rank(const RankModel& model, std::string_view advisory_id, std::span<const Candidate> candidates) {
  std::vector<RankedEntry> entries;
  entries.reserve(candidates.size());
  for (const auto& [sha, fv] : candidates) entries.push_back({sha, model.predict(fv), fv, 0});
  return rank_scored(advisory_id, std::move(entries));
}

double predict_mean(std::span<const RankModel> models, const FeatureArray& x) {
  if (models.empty()) throw Error(Errc::invalid_argument, "no models to average");
  double s = 0.0;
  for (const auto& m : models) s += m.predict(x);
  return s / static_cast<double>(models.size());
}

FeatureArray permutation_importance(const RankModel& model, const FeatureMatrix& data, std::uint64_t seed,
                                    std::size_t repeats) {
  const double baseline = mean_log_loss(model, data);
  std::mt19937_64 rng(seed);
  FeatureArray importance{};
  FeatureMatrix shuffled = data;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::vector<double> column(data.size());
    double total = 0.0;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      for (std::size_t r = 0; r < data.size(); ++r) column[r] = data.x[r][f];
      seeded_shuffle(std::span<double>(column), rng);
      for (std::size_t r = 0; r < data.size(); ++r) shuffled.x[r][f] = column[r];
      total += mean_log_loss(model, shuffled) - baseline;
    }
    for (std::size_t r = 0; r < data.size(); ++r) shuffled.x[r][f] = data.x[r][f];
    importance[f] = repeats ? total / static_cast<double>(repeats) : 0.0;
  }
  return importance;
}

std::string serialize_model(const RankModel& m) {
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["params"] = {{"learning_rate", m.params.learning_rate},
                   {"max_depth", m.params.max_depth},
                   {"rounds", m.params.rounds},
                   {"l2_lambda", m.params.l2_lambda},
                   {"min_child_weight", m.params.min_child_weight},
                   {"seed", m.params.seed}};
  doc["base_score"] = m.base_score;
  doc["feature_names"] = m.feature_names;
  json trees = json::array();
  for (const auto& t : m.trees) {
    json nodes = json::array();
    // [feature, threshold, left, right, leaf, is_leaf, default_left]
    for (const auto& node : t.nodes)
      nodes.push_back(json::array({node.feature, node.threshold, node.left, node.right, node.leaf, node.is_leaf,
                                   node.default_left}));
    trees.push_back(std::move(nodes));
  }
  doc["trees"] = std::move(trees);
  return doc.dump();
}

std::string model_file_contents(const RankModel& model) {
  const std::string body = serialize_model(model);
  return body + "\nchecksum " + hex64(fnv1a64(body)) + "\n";
}

RankModel parse_model_file(std::string_view contents) {
  while (!contents.empty() && (contents.back() == '\n' || contents.back() == '\r')) contents.remove_suffix(1);
  const auto nl = contents.rfind('\n');
  if (nl == std::string_view::npos) throw Error(Errc::corrupt_model, "model file has no checksum line");
  const std::string_view body = contents.substr(0, nl);
  const std::string_view trailer = contents.substr(nl + 1);
  if (!trailer.starts_with("checksum ") || trailer.substr(9) != hex64(fnv1a64(body)))
    throw Error(Errc::corrupt_model, "model checksum mismatch");

  RankModel m;
  try {
    const json doc = json::parse(body);
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw Error(Errc::version_mismatch, "model format_version " + std::to_string(version) + " is not supported");
    const json& p = doc.at("params");
    m.params.learning_rate = p.at("learning_rate").get<double>();
    m.params.max_depth = p.at("max_depth").get<std::uint32_t>();
    m.params.rounds = p.at("rounds").get<std::uint32_t>();
    m.params.l2_lambda = p.at("l2_lambda").get<double>();
    m.params.min_child_weight = p.at("min_child_weight").get<double>();
    m.params.seed = p.at("seed").get<std::uint64_t>();
    m.base_score = doc.at("base_score").get<double>();
    m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    for (const auto& t : doc.at("trees")) {
      Tree tree;
      for (const auto& n : t) {
        TreeNode node;
        node.feature = n.at(0).get<std::int32_t>();
        node.threshold = n.at(1).get<double>();
        node.left = n.at(2).get<std::int32_t>();
        node.right = n.at(3).get<std::int32_t>();
        node.leaf = n.at(4).get<double>();
        node.is_leaf = n.at(5).get<bool>();
        node.default_left = n.at(6).get<bool>();
        tree.nodes.push_back(node);
      }
      m.trees.push_back(std::move(tree));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::corrupt_model, std::string("model document is malformed: ") + e.what());
  }
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (i >= m.feature_names.size() || m.feature_names[i] != kFeatureNames[i])
      throw Error(Errc::corrupt_model, "model feature names do not match the canonical order");
  validate_model(m);
  return m;
}

void save_model(const RankModel& model, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::invalid_argument, "cannot write model to " + path.string());
    out << model_file_contents(model);
    if (!out.flush()) throw Error(Errc::invalid_argument, "cannot write model to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

RankModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::not_found, "cannot open model " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_file(ss.str());
}

}  // namespace patchlink
