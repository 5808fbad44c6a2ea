#include "patchlink/vfc_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "patchlink/error.hpp"

namespace patchlink {

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_loss(const LossSample& s) noexcept {
  const double x = std::clamp(s.x, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const double y = static_cast<double>(s.y);
  return -(y * std::log(x) + (1.0 - y) * std::log1p(-x));
}

double bce_gradient(const LossSample& s) noexcept {
  const double x = std::clamp(s.x, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const double y = static_cast<double>(s.y);
  return -y / x + (1.0 - y) / (1.0 - x);
}

double aggregate_commit(std::span<const FilePrediction> preds) {
  if (preds.empty()) throw Error(Errc::no_scoreable_files, "commit has no scoreable files");
  double sum = 0.0;
  for (const auto& p : preds) sum += p.probability;
  return std::clamp(sum / static_cast<double>(preds.size()), 0.0, 1.0);
}

int classify_vfc(double p, double threshold) noexcept { return p >= threshold ? 1 : 0; }

Lexicon Lexicon::parse(std::string_view text) {
  Lexicon lex;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(Errc::malformed_document, "lexicon line " + std::to_string(line_no) + ": expected token<TAB>weight");
    const std::string token = line.substr(0, tab);
    double weight = 0.0;
    try {
      weight = std::stod(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw Error(Errc::malformed_document, "lexicon line " + std::to_string(line_no) + ": bad weight");
    }
    if (token == "__bias__") lex.bias = weight;
    else lex.weights.emplace_back(token, weight);
  }
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::not_found, "cannot open lexicon " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Lexicon::serialize() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "__bias__\t" << bias << '\n';
  for (const auto& [token, w] : weights) out << token << '\t' << w << '\n';
  return out.str();
}

KeywordVfcProvider::KeywordVfcProvider(Lexicon lexicon, const HashingTokenizer& tok)
    : lexicon_(std::move(lexicon)), tok_(&tok) {
  rebuild_index();
}

void KeywordVfcProvider::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < lexicon_.weights.size(); ++i) {
    std::string token = lexicon_.weights[i].first;
    std::transform(token.begin(), token.end(), token.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    index_[tok_->token_id(token)].push_back(i);
  }
}

std::vector<std::pair<std::size_t, double>> KeywordVfcProvider::hit_vector(const ChunkEncoding& chunk) const {
  std::vector<std::pair<std::size_t, double>> hits;
  auto scan = [&](std::size_t begin, std::size_t end) {
    std::unordered_set<TokenId> seen;
    for (std::size_t i = begin; i < end; ++i) {
      const TokenId id = chunk.input_ids[i];
      if (!seen.insert(id).second) continue;
      auto it = index_.find(id);
      if (it == index_.end()) continue;
      for (std::size_t entry : it->second) hits.emplace_back(entry, 1.0);
    }
  };
  // [CLS] message [SEP] diff [EOS]
  scan(1, 1 + chunk.message_tokens);
  scan(2 + chunk.message_tokens, 2 + chunk.message_tokens + chunk.diff_tokens);
  return hits;
}

double KeywordVfcProvider::score(const ChunkEncoding& chunk) const {
  double z = lexicon_.bias;
  for (const auto& [entry, count] : hit_vector(chunk)) z += count * lexicon_.weights[entry].second;
  return sigmoid(z);
}

std::size_t KeywordVfcProvider::keyword_hits(std::string_view text) const {
  std::unordered_set<std::size_t> found;
  for (const auto& piece : HashingTokenizer::split(text)) {
    auto it = index_.find(tok_->token_id(piece));
    if (it == index_.end()) continue;
    for (std::size_t entry : it->second)
      if (lexicon_.weights[entry].second > 0) found.insert(entry);
  }
  return found.size();
}

std::vector<double> KeywordVfcProvider::fit(std::span<const ChunkEncoding> chunks, std::span<const int> labels,
                                            const FitOptions& options) {
  if (chunks.size() != labels.size()) throw Error(Errc::invalid_argument, "chunks and labels differ in length");
  std::vector<double> history;
  if (chunks.empty()) return history;

  std::vector<std::vector<std::pair<std::size_t, double>>> hits;
  hits.reserve(chunks.size());
  for (const auto& c : chunks) hits.push_back(hit_vector(c));

  const double n = static_cast<double>(chunks.size());
  std::vector<double> grad(lexicon_.weights.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_bias = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      double z = lexicon_.bias;
      for (const auto& [entry, count] : hits[i]) z += count * lexicon_.weights[entry].second;
      const double p = sigmoid(z);
      loss += bce_loss({p, labels[i]});
      // d(bce)/dz = p - y for a sigmoid output
      const double r = p - static_cast<double>(labels[i]);
      grad_bias += r;
      for (const auto& [entry, count] : hits[i]) grad[entry] += r * count;
    }
    history.push_back(loss / n);
    lexicon_.bias -= options.learning_rate * grad_bias / n;
    for (std::size_t k = 0; k < grad.size(); ++k) lexicon_.weights[k].second -= options.learning_rate * grad[k] / n;
  }
  return history;
}

}  // namespace patchlink
