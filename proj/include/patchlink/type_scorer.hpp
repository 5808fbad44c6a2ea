#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "patchlink/advisory.hpp"
#include "patchlink/chunk_encoder.hpp"
#include "patchlink/vfc_scorer.hpp"

namespace patchlink {

using TrainedLogits = std::array<double, kTrainedClassCount>;

// Probability per OwaspClass (indexed by index_of). A06 is always 0.
struct TypeDistribution {
  std::array<double, kOwaspClassCount> probs{};

  double operator[](OwaspClass c) const noexcept { return probs[index_of(c)]; }
  static TypeDistribution from_logits(const TrainedLogits& logits);
};

// Numerically stable softmax; invariant under adding a constant to every logit.
TrainedLogits softmax(const TrainedLogits& logits);

struct ClassWeights {
  std::array<double, kOwaspClassCount> w{};
  double operator[](OwaspClass c) const noexcept { return w[index_of(c)]; }

  static ClassWeights uniform();
  // Inverse class frequency of the labelled VFC training distribution,
  // normalised to mean 1 over the ten trained classes.
  static ClassWeights inverse_frequency();
};

// -w_y * log softmax(logits)_y. Throws Error{invalid_argument} for y == A06.
double weighted_ce_loss(const TrainedLogits& logits, OwaspClass y, const ClassWeights& w);
// d loss / d logit_c = w_y * (softmax_c - [c == y]).
TrainedLogits weighted_ce_gradient(const TrainedLogits& logits, OwaspClass y, const ClassWeights& w);

struct TypeVerdict {
  OwaspClass cls = OwaspClass::OTHER;
  double probability = 0.0;
};

// Class with the largest probability over all (file, class) pairs; ties go
// to the lowest class code, then the earliest file. Throws
// Error{no_scoreable_files} for an empty list.
TypeVerdict aggregate_type(std::span<const TypeDistribution> dists);

// Per-class maximum over files.
TypeDistribution pooled_distribution(std::span<const TypeDistribution> dists);

// Classes ordered by pooled probability (descending, ties by class code).
std::vector<OwaspClass> ranked_classes(const TypeDistribution& pooled);

struct TypeMatch {
  int top1 = 0;
  int top5 = 0;
  OwaspClass predicted = OwaspClass::OTHER;
};

TypeMatch type_match_features(OwaspClass advisory_class, std::span<const TypeDistribution> dists);

class TypeScoreProvider {
 public:
  virtual ~TypeScoreProvider() = default;
  virtual TypeDistribution score(const ChunkEncoding& chunk) const = 0;
};

// Per-class keyword tables: `CLASS<TAB>token<TAB>weight`, with
// `CLASS<TAB>__bias__<TAB>b` for the class bias. Logits are bias plus the
// weights of the distinct tokens present in each segment.
class KeywordTypeProvider final : public TypeScoreProvider {
 public:
  struct Entry {
    OwaspClass cls;
    std::string token;
    double weight;
  };

  KeywordTypeProvider(std::vector<Entry> entries, std::array<double, kOwaspClassCount> bias,
                      const HashingTokenizer& tok);

  static KeywordTypeProvider parse(std::string_view text, const HashingTokenizer& tok);
  static KeywordTypeProvider load(const std::filesystem::path& path, const HashingTokenizer& tok);
  std::string serialize() const;

  TypeDistribution score(const ChunkEncoding& chunk) const override;
  TrainedLogits logits(const ChunkEncoding& chunk) const;

  // Full-batch gradient descent on mean weighted cross-entropy. Returns the
  // mean loss before each epoch.
  std::vector<double> fit(std::span<const ChunkEncoding> chunks, std::span<const OwaspClass> labels,
                          const ClassWeights& weights, const FitOptions& options = {});

 private:
  std::vector<std::size_t> hits(const ChunkEncoding& chunk) const;
  void rebuild_index();

  std::vector<Entry> entries_;
  std::array<double, kOwaspClassCount> bias_{};
  const HashingTokenizer* tok_;
  std::unordered_map<TokenId, std::vector<std::size_t>> index_;
};

}  // namespace patchlink
