#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchlink/advisory.hpp"

namespace patchlink {

struct CosineResult {
  double value = 0.0;
  bool zero_vector = false;  // a norm was 0; value is then 0
};

// dot(u,v) / (|u| |v|), clamped to [-1, 1]. Throws Error{invalid_argument}
// for empty or mismatched vectors.
CosineResult cosine(std::span<const double> u, std::span<const double> v);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Hashed bag of words: each lower-cased word (stop words dropped) adds +-1
// to one of `dim` buckets, bucket and sign drawn from a seeded hash; the
// result is L2-normalised. Empty text embeds to the zero vector.
class HashedBowEmbedder final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDefaultDim = 256;
  static constexpr std::uint64_t kDefaultSeed = 0x5eed5eedULL;

  explicit HashedBowEmbedder(std::size_t dim = kDefaultDim, std::uint64_t seed = kDefaultSeed);

  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

inline constexpr std::size_t kAdvisoryTextLimit = 2048;

// summary + "\n" + details, cut to kAdvisoryTextLimit bytes.
std::string advisory_text(const Advisory& advisory);

CosineResult advisory_commit_similarity(const Advisory& advisory, std::string_view message,
                                        const EmbeddingProvider& provider);

}  // namespace patchlink
