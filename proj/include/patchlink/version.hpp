#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace patchlink {

// Orderable form of a release tag. Numeric components compare numerically
// with trailing zeros ignored (1.2 == 1.2.0); a qualifier such as `-rc1`
// sorts before the bare release, `.post1`/`.sp1` after it, and
// `.Final`/`.RELEASE`/`.GA` are the release itself.
struct VersionKey {
  struct Identifier {
    bool numeric = false;
    std::uint64_t number = 0;
    std::string text;
  };

  enum class Phase : std::uint8_t { pre_release = 0, release = 1, post_release = 2 };

  std::vector<std::uint64_t> release;
  Phase phase = Phase::release;
  std::vector<Identifier> qualifier;

  friend std::strong_ordering operator<=>(const VersionKey& a, const VersionKey& b);
  friend bool operator==(const VersionKey& a, const VersionKey& b) {
    return (a <=> b) == std::strong_ordering::equal;
  }
};

// Accepts an optional `v`/`V` prefix; nullopt when the tag is not a version.
std::optional<VersionKey> parse_version(std::string_view text);

struct VersionTag {
  std::string raw;
  VersionKey key;
};

struct SortedTags {
  std::vector<VersionTag> tags;       // ascending by key, ties by raw
  std::vector<std::string> rejected;  // unparseable inputs, input order
};

SortedTags sort_tags(const std::vector<std::string>& tags);

// Tag naming `fixed`: exact match after `v`-prefix stripping, else the
// highest tag with an equal key (so `9.4.17` finds `9.4.17.Final`).
// Throws Error{fixed_tag_missing}.
const VersionTag& find_tag(std::string_view fixed, const std::vector<VersionTag>& sorted);

// Greatest tag strictly below `fixed`. Throws Error{fixed_tag_missing} or
// Error{no_prior_tag}.
VersionTag select_prior(std::string_view fixed, const std::vector<VersionTag>& sorted);

}  // namespace patchlink
