#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "patchlink/chunk_encoder.hpp"

namespace patchlink {

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kVfcThreshold = 0.5;

double sigmoid(double z) noexcept;

struct LossSample {
  double x = 0.5;  // predicted probability
  int y = 0;       // target label
};

// -[y ln x + (1-y) ln(1-x)], with x clamped into [eps, 1-eps].
double bce_loss(const LossSample& s) noexcept;
// d/dx of bce_loss (on the clamped x).
double bce_gradient(const LossSample& s) noexcept;

struct FilePrediction {
  std::size_t file_index = 0;
  double probability = 0.0;
};

// Arithmetic mean of per-file probabilities. Throws Error{no_scoreable_files}
// for an empty list.
double aggregate_commit(std::span<const FilePrediction> preds);

// 1 iff p >= threshold.
int classify_vfc(double p, double threshold = kVfcThreshold) noexcept;

class VfcScoreProvider {
 public:
  virtual ~VfcScoreProvider() = default;
  virtual double score(const ChunkEncoding& chunk) const = 0;
};

// `token<TAB>weight` lines plus one `__bias__<TAB>b` line.
struct Lexicon {
  std::vector<std::pair<std::string, double>> weights;  // file order
  double bias = 0.0;

  static Lexicon parse(std::string_view text);
  static Lexicon load(const std::filesystem::path& path);
  std::string serialize() const;
};

struct FitOptions {
  double learning_rate = 0.1;
  std::size_t epochs = 200;
};

// Logistic over keyword hits: sigmoid(bias + sum of weights of the distinct
// lexicon tokens present in the message segment, plus the same over the diff
// segment).
class KeywordVfcProvider final : public VfcScoreProvider {
 public:
  KeywordVfcProvider(Lexicon lexicon, const HashingTokenizer& tok);

  double score(const ChunkEncoding& chunk) const override;

  // Full-batch gradient descent on mean bce_loss over the chunks, updating
  // keyword weights and bias. Returns the mean loss before each epoch.
  std::vector<double> fit(std::span<const ChunkEncoding> chunks, std::span<const int> labels,
                          const FitOptions& options = {});

  // Distinct positive-weight lexicon tokens in free text; 0 means the text
  // fails the keyword filter.
  std::size_t keyword_hits(std::string_view text) const;

  const Lexicon& lexicon() const noexcept { return lexicon_; }

 private:
  // Per lexicon entry, occurrences (0, 1 or 2) across the two segments.
  std::vector<std::pair<std::size_t, double>> hit_vector(const ChunkEncoding& chunk) const;
  void rebuild_index();

  Lexicon lexicon_;
  const HashingTokenizer* tok_;
  std::unordered_map<TokenId, std::vector<std::size_t>> index_;  // token id -> lexicon entries
};

}  // namespace patchlink
