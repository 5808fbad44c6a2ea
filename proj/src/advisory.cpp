#include "patchlink/advisory.hpp"

#include <algorithm>
#include <cctype>
#include <ctime>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "patchlink/error.hpp"

namespace patchlink {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, kOwaspClassCount> kCodes = {
    "A01", "A02", "A03", "A04", "A05", "A06", "A07", "A08", "A09", "A10", "OTHER"};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

std::string string_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string())
    throw Error(Errc::malformed_document, std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

bool is_hosted_repo(std::string_view url) {
  static const std::regex re(R"(^(https?|git)://(www\.)?(github\.com|gitlab\.com|bitbucket\.org)/[^/\s]+/[^/\s]+)",
                             std::regex::icase);
  return std::regex_search(url.begin(), url.end(), re);
}

bool is_local_repo(std::string_view url) {
  return url.starts_with("file://") || url.starts_with("/");
}

std::string derive_repo_url(const std::vector<Reference>& refs) {
  for (const auto& r : refs) {
    const auto type = upper(r.type);
    if ((type == "PACKAGE" || type == "REPOSITORY") && (is_hosted_repo(r.url) || is_local_repo(r.url)))
      return normalize_repo_url(r.url);
  }
  for (const auto& r : refs) {
    if (upper(r.type) == "FIX" && is_hosted_repo(r.url) && r.url.find("/commit/") != std::string::npos)
      return normalize_repo_url(r.url);
  }
  return {};
}

std::vector<std::string> derive_fix_commits(const std::vector<Reference>& refs) {
  static const std::regex re(R"(/commits?/([0-9a-fA-F]{7,40})(?![0-9a-zA-Z]))");
  std::vector<std::string> out;
  for (const auto& r : refs) {
    std::smatch m;
    if (std::regex_search(r.url, m, re)) {
      std::string sha = m[1].str();
      std::transform(sha.begin(), sha.end(), sha.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (std::find(out.begin(), out.end(), sha) == out.end()) out.push_back(std::move(sha));
    }
  }
  return out;
}

}  // namespace

std::string_view owasp_code(OwaspClass c) noexcept { return kCodes[index_of(c)]; }

std::optional<OwaspClass> parse_owasp_code(std::string_view code) noexcept {
  for (std::size_t i = 0; i < kCodes.size(); ++i)
    if (kCodes[i] == code) return static_cast<OwaspClass>(i);
  return std::nullopt;
}

std::optional<std::size_t> trained_index(OwaspClass c) noexcept {
  for (std::size_t i = 0; i < kTrainedClasses.size(); ++i)
    if (kTrainedClasses[i] == c) return i;
  return std::nullopt;
}

std::string normalize_repo_url(std::string_view url) {
  std::string u = trim(url);
  if (u.starts_with("scm:")) {
    // scm:git:git://host/..., scm:git:https://host/...
    const auto pos = u.find("://");
    const auto colon = pos == std::string::npos ? std::string::npos : u.rfind(':', pos - 1);
    if (colon != std::string::npos) u = u.substr(colon + 1);
  }
  if (u.starts_with("git@")) {
    // git@github.com:owner/repo.git
    const auto colon = u.find(':');
    if (colon != std::string::npos) u = "https://" + u.substr(4, colon - 4) + "/" + u.substr(colon + 1);
  }
  const auto scheme_end = u.find("://");
  if (scheme_end == std::string::npos) return u;
  const std::string scheme = upper(u.substr(0, scheme_end));
  if (scheme != "HTTP" && scheme != "HTTPS" && scheme != "GIT" && scheme != "SSH") return u;

  std::string rest = u.substr(scheme_end + 3);
  if (const auto at = rest.find('@'); at != std::string::npos && at < rest.find('/')) rest = rest.substr(at + 1);
  if (const auto q = rest.find_first_of("?#"); q != std::string::npos) rest.resize(q);

  std::vector<std::string> parts;
  std::stringstream ss(rest);
  for (std::string part; std::getline(ss, part, '/');)
    if (!part.empty()) parts.push_back(part);
  if (parts.empty()) return u;

  std::string host = parts[0];
  std::transform(host.begin(), host.end(), host.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (host.starts_with("www.")) host = host.substr(4);

  std::string out = "https://" + host;
  const bool hosted = host == "github.com" || host == "gitlab.com" || host == "bitbucket.org";
  const std::size_t keep = hosted ? std::min<std::size_t>(parts.size(), 3) : parts.size();
  for (std::size_t i = 1; i < keep; ++i) out += "/" + parts[i];
  if (out.ends_with(".git")) out.resize(out.size() - 4);
  while (out.ends_with("/")) out.pop_back();
  return out;
}

std::optional<std::int64_t> parse_rfc3339(std::string_view text) {
  static const std::regex re(
      R"(^(\d{4})-(\d{2})-(\d{2})[Tt ](\d{2}):(\d{2}):(\d{2})(\.\d+)?([Zz]|([+-])(\d{2}):(\d{2}))$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(text.begin(), text.end(), m, re)) return std::nullopt;
  std::tm tm{};
  tm.tm_year = std::stoi(m[1].str()) - 1900;
  tm.tm_mon = std::stoi(m[2].str()) - 1;
  tm.tm_mday = std::stoi(m[3].str());
  tm.tm_hour = std::stoi(m[4].str());
  tm.tm_min = std::stoi(m[5].str());
  tm.tm_sec = std::stoi(m[6].str());
  if (tm.tm_mon < 0 || tm.tm_mon > 11 || tm.tm_mday < 1 || tm.tm_mday > 31 || tm.tm_hour > 23 ||
      tm.tm_min > 59 || tm.tm_sec > 60)
    return std::nullopt;
  std::int64_t t = ::timegm(&tm);
  if (m[9].matched) {
    const std::int64_t offset = std::stoi(m[10].str()) * 3600 + std::stoi(m[11].str()) * 60;
    t += m[9].str() == "+" ? -offset : offset;
  }
  return t;
}

std::string format_rfc3339(std::int64_t epoch_seconds) {
  const std::time_t t = static_cast<std::time_t>(epoch_seconds);
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Advisory parse_advisory(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(Errc::malformed_document, std::string("advisory is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(Errc::malformed_document, "advisory document is not an object");

  Advisory adv;
  try {
    adv.id = trim(string_field(doc, "id"));
    if (adv.id.empty()) throw Error(Errc::missing_id, "advisory has no id");

    std::set<std::string> aliases;
    if (auto it = doc.find("aliases"); it != doc.end() && !it->is_null()) {
      if (!it->is_array()) throw Error(Errc::malformed_document, "aliases is not an array");
      for (const auto& a : *it) {
        std::string alias = trim(a.get<std::string>());
        if (!alias.empty() && alias != adv.id) aliases.insert(std::move(alias));
      }
    }
    adv.aliases.assign(aliases.begin(), aliases.end());

    adv.summary = string_field(doc, "summary");
    adv.details = string_field(doc, "details");

    if (auto ds = doc.find("database_specific"); ds != doc.end() && ds->is_object()) {
      if (auto cwes = ds->find("cwe_ids"); cwes != ds->end() && cwes->is_array()) {
        for (const auto& c : *cwes) {
          std::string cwe = upper(trim(c.get<std::string>()));
          if (!cwe.empty() && std::find(adv.cwe_ids.begin(), adv.cwe_ids.end(), cwe) == adv.cwe_ids.end())
            adv.cwe_ids.push_back(std::move(cwe));
        }
      }
    }
    adv.multi_cwe = adv.cwe_ids.size() > 1;

    if (auto affected = doc.find("affected"); affected != doc.end() && affected->is_array()) {
      for (const auto& entry : *affected) {
        if (adv.package.name.empty()) {
          if (auto pkg = entry.find("package"); pkg != entry.end() && pkg->is_object()) {
            adv.package.ecosystem = string_field(*pkg, "ecosystem");
            adv.package.name = string_field(*pkg, "name");
          }
        }
        auto ranges = entry.find("ranges");
        if (ranges == entry.end() || !ranges->is_array()) continue;
        for (const auto& range : *ranges) {
          auto events = range.find("events");
          if (events == range.end() || !events->is_array()) continue;
          for (const auto& ev : *events) {
            if (auto fixed = ev.find("fixed"); fixed != ev.end() && fixed->is_string()) {
              std::string v = trim(fixed->get<std::string>());
              if (!v.empty() && std::find(adv.fixed_versions.begin(), adv.fixed_versions.end(), v) ==
                                    adv.fixed_versions.end())
                adv.fixed_versions.push_back(std::move(v));
            }
          }
        }
      }
    }

    if (auto refs = doc.find("references"); refs != doc.end() && refs->is_array()) {
      for (const auto& r : *refs) {
        if (!r.is_object()) continue;
        Reference ref{string_field(r, "type"), trim(string_field(r, "url"))};
        if (!ref.url.empty()) adv.references.push_back(std::move(ref));
      }
    }
    adv.repo_url = derive_repo_url(adv.references);
    adv.fix_commits = derive_fix_commits(adv.references);

    const std::string published = string_field(doc, "published");
    if (auto t = published.empty() ? std::nullopt : parse_rfc3339(published)) {
      adv.published = *t;
    } else {
      adv.published = 0;
      adv.published_missing = true;
    }
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_document, std::string("advisory has unexpected field types: ") + e.what());
  }
  return adv;
}

Advisory load_advisory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::not_found, "cannot open advisory file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_advisory(ss.str());
}

std::string to_osv_json(const Advisory& a) {
  json doc = json::object();
  doc["id"] = a.id;
  doc["aliases"] = a.aliases;
  doc["summary"] = a.summary;
  doc["details"] = a.details;
  if (!a.published_missing) doc["published"] = format_rfc3339(a.published);
  doc["database_specific"] = {{"cwe_ids", a.cwe_ids}};

  json events = json::array();
  events.push_back({{"introduced", "0"}});
  for (const auto& v : a.fixed_versions) events.push_back({{"fixed", v}});
  json affected = json::object();
  affected["package"] = {{"ecosystem", a.package.ecosystem}, {"name", a.package.name}};
  affected["ranges"] = json::array({json{{"type", "ECOSYSTEM"}, {"events", events}}});
  doc["affected"] = json::array({affected});

  json refs = json::array();
  for (const auto& r : a.references) refs.push_back({{"type", r.type}, {"url", r.url}});
  doc["references"] = refs;
  return doc.dump(2);
}

Advisory with_repo_url(Advisory advisory, const std::string& url) {
  advisory.references.insert(advisory.references.begin(), Reference{"PACKAGE", normalize_repo_url(url)});
  advisory.repo_url = derive_repo_url(advisory.references);
  return advisory;
}

CweOwaspMap CweOwaspMap::parse(std::string_view text, std::string source_uri) {
  CweOwaspMap map;
  map.source_uri_ = std::move(source_uri);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const std::string line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.starts_with("#")) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(Errc::malformed_document, "mapping line " + std::to_string(line_no) + ": expected CWE-<n><TAB><class>");
    const std::string cwe = upper(trim(line.substr(0, tab)));
    const auto cls = parse_owasp_code(trim(line.substr(tab + 1)));
    if (!cwe.starts_with("CWE-") || !cls)
      throw Error(Errc::malformed_document, "mapping line " + std::to_string(line_no) + ": bad record '" + line + "'");
    map.entries_[cwe] = *cls;
  }
  return map;
}

CweOwaspMap CweOwaspMap::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::not_found, "cannot open CWE mapping " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

OwaspClass CweOwaspMap::lookup(std::string_view cwe_id) const {
  auto it = entries_.find(upper(trim(cwe_id)));
  return it == entries_.end() ? OwaspClass::OTHER : it->second;
}

bool CweOwaspMap::contains(std::string_view cwe_id) const {
  return entries_.find(upper(trim(cwe_id))) != entries_.end();
}

OwaspClass owasp_class_of(const Advisory& advisory, const CweOwaspMap& map) {
  if (advisory.cwe_ids.empty()) return OwaspClass::OTHER;
  return map.lookup(advisory.cwe_ids.front());
}

}  // namespace patchlink
