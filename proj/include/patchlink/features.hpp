#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "patchlink/advisory.hpp"
#include "patchlink/chunk_encoder.hpp"
#include "patchlink/repo_window.hpp"
#include "patchlink/similarity.hpp"
#include "patchlink/type_scorer.hpp"
#include "patchlink/vfc_scorer.hpp"

namespace patchlink {

inline constexpr std::size_t kFeatureCount = 7;

// Column order of every feature matrix and model file.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "vfc_probability", "type_top1_match", "type_top5_match", "similarity",
    "cve_in_message",  "ghsa_in_message", "commit_rank_norm"};

using FeatureArray = std::array<double, kFeatureCount>;

struct FeatureVector {
  double vfc_probability = 0.0;
  double type_top1_match = 0.0;
  double type_top5_match = 0.0;
  double similarity = 0.0;
  double cve_in_message = 0.0;
  double ghsa_in_message = 0.0;
  double commit_rank_norm = 1.0;

  FeatureArray values() const noexcept {
    return {vfc_probability, type_top1_match, type_top5_match, similarity,
            cve_in_message,  ghsa_in_message, commit_rank_norm};
  }
  static FeatureVector from_values(const FeatureArray& v) noexcept {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  }
  bool operator==(const FeatureVector&) const = default;
};

struct IdFlags {
  int cve = 0;
  int ghsa = 0;
};

// Case-insensitive search for the advisory's own CVE-/GHSA- identifiers (id
// and aliases). A hit must not be glued to further identifier characters,
// so CVE-2019-9721 does not match inside CVE-2019-97210.
IdFlags detect_ids(std::string_view message, const Advisory& advisory);

// rank / total. Throws Error{invalid_rank} unless 1 <= rank <= total.
double commit_rank_norm(std::size_t rank, std::size_t total);

struct Providers {
  const TokenizerProvider* tokenizer = nullptr;
  const VfcScoreProvider* vfc = nullptr;
  const TypeScoreProvider* type = nullptr;
  const EmbeddingProvider* embedder = nullptr;
  const CweOwaspMap* cwe_map = nullptr;
  std::size_t max_len = kDefaultMaxLen;
};

struct AssembledCommit {
  FeatureVector features;
  OwaspClass predicted_type = OwaspClass::OTHER;
  bool no_scoreable_files = false;
  bool zero_similarity_vector = false;
  std::vector<Language> languages;  // distinct scoreable languages, sorted
};

// Per-advisory state (advisory embedding, OWASP class) computed once and
// reused for every commit of its windows. Read-only after construction.
class FeatureAssembler {
 public:
  FeatureAssembler(const Advisory& advisory, const Providers& providers);

  AssembledCommit assemble(const CommitRecord& commit, const CommitWindow& window) const;

  OwaspClass advisory_class() const noexcept { return advisory_class_; }

 private:
  const Advisory* advisory_;
  Providers providers_;
  OwaspClass advisory_class_;
  std::vector<double> advisory_embedding_;
};

AssembledCommit assemble(const Advisory& advisory, const CommitRecord& commit, const CommitWindow& window,
                         const Providers& providers);

}  // namespace patchlink
