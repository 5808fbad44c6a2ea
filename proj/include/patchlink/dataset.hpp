#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "patchlink/advisory.hpp"
#include "patchlink/features.hpp"
#include "patchlink/ranker.hpp"
#include "patchlink/repo_window.hpp"

namespace patchlink {

struct AdvisoryWindows {
  Advisory advisory;
  std::vector<std::string> fixed_versions;  // parallel to windows
  std::vector<CommitWindow> windows;
};

struct LabeledRow {
  std::string advisory_id;
  std::string fixed_version;
  std::string sha;
  FeatureVector features;
  int label = 0;
  OwaspClass advisory_type = OwaspClass::OTHER;
  OwaspClass predicted_type = OwaspClass::OTHER;
  std::vector<Language> languages;
  bool multi_cwe = false;
};

// True when `sha` is one of the advisory's fix commits (which may be
// abbreviated to a prefix of at least 7 characters).
bool is_fix_commit(const Advisory& advisory, std::string_view sha);

// Every commit of every window becomes one row, in window order.
std::vector<LabeledRow> contiguous_sample(std::span<const AdvisoryWindows> items, const Providers& providers);

struct NegativeSample {
  struct Pick {
    std::string vfc_sha;
    std::string sha;
  };
  std::vector<Pick> picks;  // grouped by VFC, `ratio` per VFC while the pool lasts
  bool insufficient = false;
};

// Negatives drawn from one repository's history: commits whose message
// fails the keyword filter (no lexicon hit), that touch a scoreable-language
// file, and that are not VFCs. The eligible pool is shuffled with `seed`
// and handed out in chunks of `ratio`; all picks are distinct.
NegativeSample sample_non_vfcs(std::span<const CommitRecord> history, std::span<const std::string> vfc_shas,
                               const KeywordVfcProvider& filter, std::size_t ratio, std::uint64_t seed);

struct SplitItem {
  std::string advisory_id;
  OwaspClass owasp = OwaspClass::OTHER;
  Language language = Language::Other;  // dominant language of the repository
  std::vector<std::string> shas;        // every commit of every window
};

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::string> holdout;
};

struct SplitResult {
  std::vector<std::string> holdout;             // sorted
  std::vector<std::vector<std::string>> folds;  // sorted within each fold
  bool stratum_too_small = false;
  std::vector<std::string> merged_strata;  // keys folded into the shared remainder stratum

  // Fold `test_fold` as test, the other folds as train.
  CorpusSplit view(std::size_t test_fold) const;
};

// Stratified by (OWASP class, language). Advisories whose windows share a
// commit are placed together, so no sha crosses a split boundary. The
// holdout takes round(fraction * n) advisories by systematic sampling over
// the stratified order, and the rest go to the least-loaded fold in the
// same order. Throws Error{invalid_argument} for fewer advisories than folds.
SplitResult split(std::span<const SplitItem> items, double holdout_fraction, std::size_t folds, std::uint64_t seed);

// Most common scoreable language over all files of the windows (ties go to
// the lower enum value); Other when nothing is scoreable.
Language dominant_language(std::span<const CommitWindow> windows);

// Shas that appear under more than one of the given id groups.
std::vector<std::string> overlapping_shas(std::span<const SplitItem> items,
                                          std::span<const std::vector<std::string>> groups);

// --- corpus files ---------------------------------------------------------

// CSV with header: advisory_id,fixed_version,sha,<7 features>,label,
// advisory_type,predicted_type,languages (languages joined by '|').
void write_feature_csv(std::ostream& out, std::span<const LabeledRow> rows);
std::vector<LabeledRow> read_feature_csv(std::istream& in);

// advisory_id<TAB>sha<TAB>label
void write_labels_tsv(std::ostream& out, std::span<const LabeledRow> rows);

std::string split_to_json(const SplitResult& s);
SplitResult split_from_json(std::string_view text);

struct Corpus {
  std::vector<LabeledRow> rows;
  SplitResult split;
};

// Directory layout: features.csv, labels.tsv, split.json, plus windows/ and
// advisories/ written by the builder.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

std::vector<LabeledRow> rows_of(std::span<const LabeledRow> rows, std::span<const std::string> advisory_ids);
FeatureMatrix matrix_of(std::span<const LabeledRow> rows);

}  // namespace patchlink
