#include "patchlink/type_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "patchlink/error.hpp"

namespace patchlink {

namespace {

// Labelled VFC counts per class (A06 has none).
constexpr std::array<double, kOwaspClassCount> kClassCounts = {1333, 126, 2249, 232, 125, 0,
                                                                322,  209, 30,   88,  3133};

std::size_t require_trained(OwaspClass y) {
  auto idx = trained_index(y);
  if (!idx) throw Error(Errc::invalid_argument, "class A06 is not a trained class");
  return *idx;
}

}  // namespace

TrainedLogits softmax(const TrainedLogits& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  TrainedLogits out{};
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

TypeDistribution TypeDistribution::from_logits(const TrainedLogits& logits) {
  const auto p = softmax(logits);
  TypeDistribution d;
  for (std::size_t i = 0; i < kTrainedClasses.size(); ++i) d.probs[index_of(kTrainedClasses[i])] = p[i];
  return d;
}

ClassWeights ClassWeights::uniform() {
  ClassWeights cw;
  cw.w.fill(1.0);
  return cw;
}

ClassWeights ClassWeights::inverse_frequency() {
  ClassWeights cw;
  double sum = 0.0;
  for (OwaspClass c : kTrainedClasses) {
    cw.w[index_of(c)] = 1.0 / kClassCounts[index_of(c)];
    sum += cw.w[index_of(c)];
  }
  const double mean = sum / static_cast<double>(kTrainedClassCount);
  for (OwaspClass c : kTrainedClasses) cw.w[index_of(c)] /= mean;
  cw.w[index_of(OwaspClass::A06)] = 1.0;
  return cw;
}

double weighted_ce_loss(const TrainedLogits& logits, OwaspClass y, const ClassWeights& w) {
  const std::size_t yi = require_trained(y);
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double log_prob = logits[yi] - m - std::log(sum);
  return -w[y] * log_prob;
}

TrainedLogits weighted_ce_gradient(const TrainedLogits& logits, OwaspClass y, const ClassWeights& w) {
  const std::size_t yi = require_trained(y);
  auto g = softmax(logits);
  g[yi] -= 1.0;
  for (auto& v : g) v *= w[y];
  return g;
}

TypeVerdict aggregate_type(std::span<const TypeDistribution> dists) {
  if (dists.empty()) throw Error(Errc::no_scoreable_files, "commit has no scoreable files");
  TypeVerdict best{OwaspClass::A01, -1.0};
  for (OwaspClass c : kAllOwaspClasses) {
    for (const auto& d : dists) {
      if (d[c] > best.probability) best = {c, d[c]};
    }
  }
  return best;
}

TypeDistribution pooled_distribution(std::span<const TypeDistribution> dists) {
  TypeDistribution pooled;
  for (const auto& d : dists)
    for (std::size_t i = 0; i < kOwaspClassCount; ++i) pooled.probs[i] = std::max(pooled.probs[i], d.probs[i]);
  return pooled;
}

std::vector<OwaspClass> ranked_classes(const TypeDistribution& pooled) {
  std::vector<OwaspClass> order(kAllOwaspClasses.begin(), kAllOwaspClasses.end());
  std::stable_sort(order.begin(), order.end(),
                   [&](OwaspClass a, OwaspClass b) { return pooled[a] > pooled[b]; });
  return order;
}

TypeMatch type_match_features(OwaspClass advisory_class, std::span<const TypeDistribution> dists) {
  const TypeVerdict verdict = aggregate_type(dists);
  const auto order = ranked_classes(pooled_distribution(dists));
  TypeMatch m;
  m.predicted = verdict.cls;
  m.top1 = verdict.cls == advisory_class ? 1 : 0;
  m.top5 = std::find(order.begin(), order.begin() + 5, advisory_class) != order.begin() + 5 ? 1 : 0;
  return m;
}

KeywordTypeProvider::KeywordTypeProvider(std::vector<Entry> entries, std::array<double, kOwaspClassCount> bias,
                                         const HashingTokenizer& tok)
    : entries_(std::move(entries)), bias_(bias), tok_(&tok) {
  rebuild_index();
}

void KeywordTypeProvider::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].cls == OwaspClass::A06) throw Error(Errc::malformed_document, "A06 has no trained weights");
    std::string token = entries_[i].token;
    std::transform(token.begin(), token.end(), token.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    index_[tok_->token_id(token)].push_back(i);
  }
}

KeywordTypeProvider KeywordTypeProvider::parse(std::string_view text, const HashingTokenizer& tok) {
  std::vector<Entry> entries;
  std::array<double, kOwaspClassCount> bias{};
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string cls_code, token, weight;
    if (!std::getline(fields, cls_code, '\t') || !std::getline(fields, token, '\t') || !std::getline(fields, weight))
      throw Error(Errc::malformed_document, "type lexicon line " + std::to_string(line_no) + ": expected 3 fields");
    const auto cls = parse_owasp_code(cls_code);
    if (!cls) throw Error(Errc::malformed_document, "type lexicon line " + std::to_string(line_no) + ": bad class");
    double w = 0.0;
    try {
      w = std::stod(weight);
    } catch (const std::exception&) {
      throw Error(Errc::malformed_document, "type lexicon line " + std::to_string(line_no) + ": bad weight");
    }
    if (token == "__bias__") bias[index_of(*cls)] = w;
    else entries.push_back({*cls, token, w});
  }
  return KeywordTypeProvider(std::move(entries), bias, tok);
}

KeywordTypeProvider KeywordTypeProvider::load(const std::filesystem::path& path, const HashingTokenizer& tok) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::not_found, "cannot open type lexicon " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), tok);
}

std::string KeywordTypeProvider::serialize() const {
  std::ostringstream out;
  out << std::setprecision(17);
  for (OwaspClass c : kTrainedClasses) out << owasp_code(c) << "\t__bias__\t" << bias_[index_of(c)] << '\n';
  for (const auto& e : entries_) out << owasp_code(e.cls) << '\t' << e.token << '\t' << e.weight << '\n';
  return out.str();
}

std::vector<std::size_t> KeywordTypeProvider::hits(const ChunkEncoding& chunk) const {
  std::vector<std::size_t> out;
  auto scan = [&](std::size_t begin, std::size_t end) {
    std::unordered_set<TokenId> seen;
    for (std::size_t i = begin; i < end; ++i) {
      if (!seen.insert(chunk.input_ids[i]).second) continue;
      if (auto it = index_.find(chunk.input_ids[i]); it != index_.end())
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
  };
  scan(1, 1 + chunk.message_tokens);
  scan(2 + chunk.message_tokens, 2 + chunk.message_tokens + chunk.diff_tokens);
  return out;
}

TrainedLogits KeywordTypeProvider::logits(const ChunkEncoding& chunk) const {
  TrainedLogits z{};
  for (std::size_t i = 0; i < kTrainedClasses.size(); ++i) z[i] = bias_[index_of(kTrainedClasses[i])];
  for (std::size_t entry : hits(chunk)) z[*trained_index(entries_[entry].cls)] += entries_[entry].weight;
  return z;
}

TypeDistribution KeywordTypeProvider::score(const ChunkEncoding& chunk) const {
  return TypeDistribution::from_logits(logits(chunk));
}

std::vector<double> KeywordTypeProvider::fit(std::span<const ChunkEncoding> chunks, std::span<const OwaspClass> labels,
                                             const ClassWeights& weights, const FitOptions& options) {
  if (chunks.size() != labels.size()) throw Error(Errc::invalid_argument, "chunks and labels differ in length");
  std::vector<double> history;
  if (chunks.empty()) return history;

  std::vector<std::vector<std::size_t>> chunk_hits;
  for (const auto& c : chunks) chunk_hits.push_back(hits(c));

  const double n = static_cast<double>(chunks.size());
  std::vector<double> grad(entries_.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    TrainedLogits grad_bias{};
    double loss = 0.0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      TrainedLogits z{};
      for (std::size_t k = 0; k < kTrainedClasses.size(); ++k) z[k] = bias_[index_of(kTrainedClasses[k])];
      for (std::size_t entry : chunk_hits[i]) z[*trained_index(entries_[entry].cls)] += entries_[entry].weight;
      loss += weighted_ce_loss(z, labels[i], weights);
      const auto g = weighted_ce_gradient(z, labels[i], weights);
      for (std::size_t k = 0; k < g.size(); ++k) grad_bias[k] += g[k];
      for (std::size_t entry : chunk_hits[i]) grad[entry] += g[*trained_index(entries_[entry].cls)];
    }
    history.push_back(loss / n);
    for (std::size_t k = 0; k < kTrainedClasses.size(); ++k)
      bias_[index_of(kTrainedClasses[k])] -= options.learning_rate * grad_bias[k] / n;
    for (std::size_t e = 0; e < entries_.size(); ++e) entries_[e].weight -= options.learning_rate * grad[e] / n;
  }
  return history;
}

}  // namespace patchlink
