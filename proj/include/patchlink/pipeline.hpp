#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patchlink/advisory.hpp"
#include "patchlink/chunk_encoder.hpp"
#include "patchlink/dataset.hpp"
#include "patchlink/features.hpp"
#include "patchlink/ranker.hpp"
#include "patchlink/repo_window.hpp"
#include "patchlink/similarity.hpp"
#include "patchlink/type_scorer.hpp"
#include "patchlink/vfc_scorer.hpp"

namespace patchlink {

// $PATCHLINK_DATA when set, else the data directory of the source tree.
std::filesystem::path default_data_dir();

// Deterministic scorers loaded from the data directory: cwe_owasp.tsv,
// vfc_lexicon.tsv and type_lexicon.tsv. Not copyable (the scorers point at
// the tokenizer).
class ReferenceProviders {
 public:
  explicit ReferenceProviders(const std::filesystem::path& data_dir = default_data_dir());
  ReferenceProviders(const ReferenceProviders&) = delete;
  ReferenceProviders& operator=(const ReferenceProviders&) = delete;

  Providers view() const;

  HashingTokenizer tokenizer;
  CweOwaspMap cwe_map;
  KeywordVfcProvider vfc;
  KeywordTypeProvider type;
  HashedBowEmbedder embedder;
};

struct WindowRanking {
  std::string fixed_version;
  std::string error;  // empty, or fixed_tag_missing / no_prior_tag / empty_window
  std::string error_message;
  CommitWindow window;
  RankedResult ranked;
};

// Mines and ranks one window per fixed version. Window-level tag problems
// are reported in WindowRanking::error instead of thrown.
std::vector<WindowRanking> rank_advisory(const Advisory& advisory, const GitRepository& repo,
                                         std::span<const RankModel> models, const Providers& providers);

struct MinedAdvisory {
  AdvisoryWindows item;
  std::vector<std::pair<std::string, std::string>> skipped;  // (fixed version, reason)
};

MinedAdvisory mine_advisory(const Advisory& advisory, const GitRepository& repo);

}  // namespace patchlink
