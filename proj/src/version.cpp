#include "patchlink/version.hpp"

#include <algorithm>
#include <cctype>

#include "patchlink/error.hpp"

namespace patchlink {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::optional<std::uint64_t> parse_number(std::string_view digits) {
  if (digits.empty() || digits.size() > 19) return std::nullopt;
  std::uint64_t v = 0;
  for (char c : digits) v = v * 10 + static_cast<std::uint64_t>(c - '0');
  return v;
}

std::string_view strip_v(std::string_view s) {
  if (s.size() > 1 && (s[0] == 'v' || s[0] == 'V') && is_digit(s[1])) s.remove_prefix(1);
  return s;
}

std::strong_ordering compare_identifier(const VersionKey::Identifier& a, const VersionKey::Identifier& b) {
  if (a.numeric != b.numeric) return a.numeric ? std::strong_ordering::less : std::strong_ordering::greater;
  if (a.numeric) return a.number <=> b.number;
  const int c = a.text.compare(b.text);
  return c < 0 ? std::strong_ordering::less : (c > 0 ? std::strong_ordering::greater : std::strong_ordering::equal);
}

}  // namespace

std::strong_ordering operator<=>(const VersionKey& a, const VersionKey& b) {
  const std::size_t n = std::max(a.release.size(), b.release.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t x = i < a.release.size() ? a.release[i] : 0;
    const std::uint64_t y = i < b.release.size() ? b.release[i] : 0;
    if (x != y) return x <=> y;
  }
  if (a.phase != b.phase) return a.phase <=> b.phase;
  const std::size_t m = std::min(a.qualifier.size(), b.qualifier.size());
  for (std::size_t i = 0; i < m; ++i) {
    if (auto c = compare_identifier(a.qualifier[i], b.qualifier[i]); c != 0) return c;
  }
  return a.qualifier.size() <=> b.qualifier.size();
}

std::optional<VersionKey> parse_version(std::string_view text) {
  std::string_view s = strip_v(text);
  VersionKey key;

  std::size_t i = 0;
  while (true) {
    const std::size_t start = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    auto num = parse_number(s.substr(start, i - start));
    if (!num) return std::nullopt;
    key.release.push_back(*num);
    if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
      ++i;
      continue;
    }
    break;
  }

  std::string_view rest = s.substr(i);
  if (const auto plus = rest.find('+'); plus != std::string_view::npos) {
    const std::string_view build = rest.substr(plus + 1);
    if (build.empty() || !std::all_of(build.begin(), build.end(),
                                      [](char c) { return is_alnum(c) || c == '.' || c == '-'; }))
      return std::nullopt;
    rest = rest.substr(0, plus);
  }
  if (rest.empty()) return key;

  if (rest[0] == '-' || rest[0] == '.' || rest[0] == '_') rest.remove_prefix(1);
  if (rest.empty() || !is_alnum(rest[0])) return std::nullopt;

  // Split on separators and on letter/digit boundaries: "rc.1", "rc1", "RC-1"
  // all become {rc, 1}.
  std::size_t j = 0;
  while (j < rest.size()) {
    const char c = rest[j];
    if (c == '.' || c == '-' || c == '_') {
      ++j;
      continue;
    }
    if (!is_alnum(c)) return std::nullopt;
    const bool numeric = is_digit(c);
    const std::size_t start = j;
    while (j < rest.size() && is_alnum(rest[j]) && is_digit(rest[j]) == numeric) ++j;
    VersionKey::Identifier id;
    id.numeric = numeric;
    if (numeric) {
      auto num = parse_number(rest.substr(start, j - start));
      if (!num) return std::nullopt;
      id.number = *num;
    } else {
      id.text.assign(rest.substr(start, j - start));
      std::transform(id.text.begin(), id.text.end(), id.text.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    }
    key.qualifier.push_back(std::move(id));
  }
  if (key.qualifier.empty()) return key;

  const auto& head = key.qualifier.front();
  if (!head.numeric && key.qualifier.size() == 1 &&
      (head.text == "final" || head.text == "release" || head.text == "ga")) {
    key.qualifier.clear();
    key.phase = VersionKey::Phase::release;
  } else if (!head.numeric && (head.text == "post" || head.text == "sp")) {
    key.phase = VersionKey::Phase::post_release;
  } else {
    key.phase = VersionKey::Phase::pre_release;
  }
  return key;
}

SortedTags sort_tags(const std::vector<std::string>& tags) {
  SortedTags out;
  for (const auto& raw : tags) {
    if (auto key = parse_version(raw))
      out.tags.push_back(VersionTag{raw, std::move(*key)});
    else
      out.rejected.push_back(raw);
  }
  std::sort(out.tags.begin(), out.tags.end(), [](const VersionTag& a, const VersionTag& b) {
    if (auto c = a.key <=> b.key; c != 0) return c < 0;
    return a.raw < b.raw;
  });
  out.tags.erase(std::unique(out.tags.begin(), out.tags.end(),
                             [](const VersionTag& a, const VersionTag& b) { return a.raw == b.raw; }),
                 out.tags.end());
  return out;
}

const VersionTag& find_tag(std::string_view fixed, const std::vector<VersionTag>& sorted) {
  const std::string_view wanted = strip_v(fixed);
  for (const auto& t : sorted)
    if (strip_v(t.raw) == wanted) return t;
  if (auto key = parse_version(fixed)) {
    for (auto it = sorted.rbegin(); it != sorted.rend(); ++it)
      if (it->key == *key) return *it;
  }
  throw Error(Errc::fixed_tag_missing, "no tag matches fixed version '" + std::string(fixed) + "'");
}

VersionTag select_prior(std::string_view fixed, const std::vector<VersionTag>& sorted) {
  const VersionTag& fixed_tag = find_tag(fixed, sorted);
  const VersionTag* best = nullptr;
  for (const auto& t : sorted) {
    if (t.key < fixed_tag.key && (!best || !(t.key < best->key))) best = &t;
  }
  if (!best) throw Error(Errc::no_prior_tag, "no tag precedes fixed version '" + std::string(fixed) + "'");
  return *best;
}

}  // namespace patchlink
