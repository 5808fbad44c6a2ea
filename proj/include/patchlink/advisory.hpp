#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace patchlink {

// OWASP Top 10 (2021) plus a catch-all. Declaration order is the class-code
// order used for tie-breaking everywhere.
enum class OwaspClass : std::uint8_t { A01, A02, A03, A04, A05, A06, A07, A08, A09, A10, OTHER };

inline constexpr std::size_t kOwaspClassCount = 11;

// A06 has no training examples, so type models emit distributions over the
// remaining ten classes.
inline constexpr std::size_t kTrainedClassCount = 10;

inline constexpr std::array<OwaspClass, kOwaspClassCount> kAllOwaspClasses = {
    OwaspClass::A01, OwaspClass::A02, OwaspClass::A03, OwaspClass::A04,
    OwaspClass::A05, OwaspClass::A06, OwaspClass::A07, OwaspClass::A08,
    OwaspClass::A09, OwaspClass::A10, OwaspClass::OTHER};

inline constexpr std::array<OwaspClass, kTrainedClassCount> kTrainedClasses = {
    OwaspClass::A01, OwaspClass::A02, OwaspClass::A03, OwaspClass::A04,
    OwaspClass::A05, OwaspClass::A07, OwaspClass::A08, OwaspClass::A09,
    OwaspClass::A10, OwaspClass::OTHER};

std::string_view owasp_code(OwaspClass c) noexcept;
std::optional<OwaspClass> parse_owasp_code(std::string_view code) noexcept;
constexpr std::size_t index_of(OwaspClass c) noexcept { return static_cast<std::size_t>(c); }

// Position of `c` within kTrainedClasses; nullopt for A06.
std::optional<std::size_t> trained_index(OwaspClass c) noexcept;

struct Reference {
  std::string type;
  std::string url;
  bool operator==(const Reference&) const = default;
};

struct PackageId {
  std::string ecosystem;
  std::string name;
  bool operator==(const PackageId&) const = default;
};

struct Advisory {
  std::string id;
  std::vector<std::string> aliases;  // sorted, unique, never contains id
  std::string summary;
  std::string details;
  std::vector<std::string> cwe_ids;
  std::vector<Reference> references;  // verbatim, in document order
  PackageId package;
  std::vector<std::string> fixed_versions;  // document order, unique
  std::int64_t published = 0;               // UTC epoch seconds

  // Derived from `references` at parse time.
  std::string repo_url;
  std::vector<std::string> fix_commits;

  bool multi_cwe = false;
  bool published_missing = false;

  bool operator==(const Advisory&) const = default;
};

// Parses the OSV subset: id, aliases, summary, details,
// database_specific.cwe_ids, affected[].package, affected[].ranges[].events[].fixed,
// references[].{type,url}, published.
// Throws Error{malformed_document} or Error{missing_id}.
Advisory parse_advisory(std::string_view document);
Advisory load_advisory(const std::filesystem::path& path);

// Serialises back to the same OSV subset; parse_advisory(to_osv_json(a)) == a.
std::string to_osv_json(const Advisory& advisory);

// Records a resolved repository link as a PACKAGE reference so the derived
// repo_url survives re-serialisation.
Advisory with_repo_url(Advisory advisory, const std::string& url);

// Repository root for a GitHub-style URL (`https://host/owner/repo`), with
// scheme forced to https and any `.git` / trailing slash removed. Non-http
// inputs (local paths, file:// URLs) are returned unchanged.
std::string normalize_repo_url(std::string_view url);

// Parses `YYYY-MM-DDTHH:MM:SS[.frac](Z|+hh:mm|-hh:mm)`; nullopt if malformed.
std::optional<std::int64_t> parse_rfc3339(std::string_view text);
std::string format_rfc3339(std::int64_t epoch_seconds);

class CweOwaspMap {
 public:
  CweOwaspMap() = default;

  // One record per line: `CWE-<n>\t<A01..A10|OTHER>`. `#` lines and blank
  // lines are ignored. Throws Error{malformed_document} on a bad record.
  static CweOwaspMap parse(std::string_view text, std::string source_uri = {});
  static CweOwaspMap load(const std::filesystem::path& path);

  // Unknown ids fall back to OTHER.
  OwaspClass lookup(std::string_view cwe_id) const;
  bool contains(std::string_view cwe_id) const;

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& source_uri() const noexcept { return source_uri_; }
  const std::map<std::string, OwaspClass, std::less<>>& entries() const noexcept {
    return entries_;
  }

 private:
  std::map<std::string, OwaspClass, std::less<>> entries_;
  std::string source_uri_;
};

// Class of the advisory's first CWE; OTHER for no CWE or an unmapped one.
OwaspClass owasp_class_of(const Advisory& advisory, const CweOwaspMap& map);

}  // namespace patchlink
