#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "patchlink/version.hpp"

namespace patchlink {

// The nine languages the scorers are trained on; everything else is Other
// and is carried along but never scored.
enum class Language : std::uint8_t { CCpp, Python, TypeScript, JavaScript, PHP, Java, Ruby, CSharp, Go, Other };

inline constexpr std::size_t kLanguageCount = 10;

Language language_of(std::string_view path) noexcept;
std::string_view language_name(Language lang) noexcept;
Language parse_language(std::string_view name) noexcept;

struct FileDiff {
  std::string path;
  Language language = Language::Other;
  std::string patch_text;  // hunks, starting at the first "@@"
  std::uint32_t additions = 0;
  std::uint32_t deletions = 0;
  bool binary = false;

  bool scoreable() const noexcept { return language != Language::Other && !patch_text.empty(); }
};

struct CommitRecord {
  std::string sha;
  std::string message;
  std::vector<FileDiff> files;
  std::size_t rank = 0;  // 1-based position in its window
};

struct CommitWindow {
  VersionTag fixed_tag;
  VersionTag prior_tag;
  std::vector<CommitRecord> commits;  // oldest first
  std::size_t total = 0;
  bool oversized = false;  // more than kLargeWindow commits
};

inline constexpr std::size_t kLargeWindow = 5000;

// Splits `git log --patch` output for one commit into per-file diffs.
std::vector<FileDiff> parse_unified_diff(std::string_view diff);

// Read access to one local clone through the git CLI. One instance per
// worker; instances are not shared across threads.
class GitRepository {
 public:
  explicit GitRepository(std::filesystem::path path);

  // Local paths and file:// URLs are used in place; anything else is cloned
  // (bare) under `cache_dir` on first use. Throws Error{repo_access}.
  static GitRepository open(const std::string& repo_url, const std::filesystem::path& cache_dir);

  const std::filesystem::path& path() const noexcept { return path_; }

  std::vector<std::string> tags() const;

  // Commits reachable from `fixed` and not from `prior`, oldest first, with
  // merge diffs taken against the first parent.
  // Throws Error{empty_window} or Error{repo_access}.
  CommitWindow enumerate_window(const VersionTag& prior, const VersionTag& fixed) const;

  // Every commit reachable from any ref. File lists carry paths and
  // languages but no patch text.
  std::vector<CommitRecord> history() const;

  std::string git(const std::vector<std::string>& args) const;

 private:
  std::filesystem::path path_;
};

// Window for one advisory fixed version: tag lookup, prior selection and
// enumeration in one step.
CommitWindow mine_window(const GitRepository& repo, std::string_view fixed_version);

// Interchange records: one JSON object per line per file diff (commits
// without files get a single record with an empty path).
void write_window_records(std::ostream& out, const CommitWindow& window);
std::vector<CommitWindow> read_window_records(std::istream& in);

}  // namespace patchlink
