#include "patchlink/similarity.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "patchlink/chunk_encoder.hpp"
#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"

namespace patchlink {

namespace {

constexpr std::array<std::string_view, 40> kStopWords = {
    "a",    "an",   "and",  "are",  "as",   "at",   "be",   "by",   "can",  "for",
    "from", "has",  "have", "if",   "in",   "into", "is",   "it",   "its",  "may",
    "not",  "of",   "on",   "or",   "that", "the",  "their", "this", "to",  "was",
    "were", "when", "which", "will", "with", "would", "been", "all",  "any",  "some"};

bool is_stop_word(std::string_view w) {
  return std::find(kStopWords.begin(), kStopWords.end(), w) != kStopWords.end();
}

}  // namespace

CosineResult cosine(std::span<const double> u, std::span<const double> v) {
  if (u.empty() || u.size() != v.size())
    throw Error(Errc::invalid_argument, "cosine needs two non-empty vectors of equal length");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return {0.0, true};
  return {std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0), false};
}

HashedBowEmbedder::HashedBowEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw Error(Errc::invalid_argument, "embedding dimension must be positive");
}

std::vector<double> HashedBowEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dim_, 0.0);
  for (const auto& piece : HashingTokenizer::split(text)) {
    if (!std::isalnum(static_cast<unsigned char>(piece[0])) && piece[0] != '_') continue;
    if (is_stop_word(piece)) continue;
    const std::uint64_t h = mix64(fnv1a64(piece) ^ seed_);
    const std::size_t bucket = static_cast<std::size_t>(h % dim_);
    v[bucket] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

std::string advisory_text(const Advisory& advisory) {
  std::string text = advisory.summary;
  if (!advisory.details.empty()) {
    if (!text.empty()) text += "\n";
    text += advisory.details;
  }
  if (text.size() > kAdvisoryTextLimit) text.resize(kAdvisoryTextLimit);
  return text;
}

CosineResult advisory_commit_similarity(const Advisory& advisory, std::string_view message,
                                        const EmbeddingProvider& provider) {
  const auto a = provider.embed(advisory_text(advisory));
  const auto m = provider.embed(message);
  return cosine(a, m);
}

}  // namespace patchlink
