#include "patchlink/repo_window.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "patchlink/advisory.hpp"
#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"
#include "patchlink/process.hpp"

namespace patchlink {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, kLanguageCount> kLanguageNames = {
    "C/C++", "Python", "TypeScript", "JavaScript", "PHP", "Java", "Ruby", "C#", "Go", "Other"};

constexpr char kRecordSep = '\x1e';
constexpr char kFieldSep = '\x1f';

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

std::string rstrip(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string unquote_path(std::string_view p) {
  if (p.size() >= 2 && p.front() == '"' && p.back() == '"') p = p.substr(1, p.size() - 2);
  return std::string(p);
}

// "diff --git a/X b/Y" -> Y. Paths containing " b/" are resolved by
// assuming an unrenamed file (both halves equal).
std::string path_from_diff_header(std::string_view header) {
  std::string_view rest = header.substr(std::string_view("diff --git ").size());
  if (rest.size() % 2 == 1) {
    const std::size_t half = rest.size() / 2;
    const auto a = rest.substr(0, half);
    const auto b = rest.substr(half + 1);
    if (a.starts_with("a/") && b.starts_with("b/") && a.substr(2) == b.substr(2)) return unquote_path(b.substr(2));
  }
  const auto pos = rest.rfind(" b/");
  if (pos != std::string_view::npos) return unquote_path(rest.substr(pos + 3));
  return unquote_path(rest);
}

FileDiff parse_file_section(std::string_view section) {
  FileDiff fd;
  std::string plus_path;
  std::string minus_path;
  std::size_t hunk_start = std::string_view::npos;

  std::size_t pos = 0;
  bool first = true;
  while (pos < section.size()) {
    const auto end = std::min(section.find('\n', pos), section.size());
    const std::string_view line = section.substr(pos, end - pos);
    if (first) {
      fd.path = path_from_diff_header(line);
      first = false;
    } else if (hunk_start == std::string_view::npos) {
      if (line.starts_with("+++ ")) {
        const auto p = line.substr(4);
        if (p != "/dev/null") plus_path = unquote_path(p.starts_with("b/") ? p.substr(2) : p);
      } else if (line.starts_with("--- ")) {
        const auto p = line.substr(4);
        if (p != "/dev/null") minus_path = unquote_path(p.starts_with("a/") ? p.substr(2) : p);
      } else if (line.starts_with("Binary files ") || line.starts_with("GIT binary patch")) {
        fd.binary = true;
      } else if (line.starts_with("@@")) {
        hunk_start = pos;
      }
    }
    if (hunk_start != std::string_view::npos && pos > hunk_start) {
      if (line.starts_with("+")) ++fd.additions;
      else if (line.starts_with("-")) ++fd.deletions;
    }
    pos = end + 1;
  }
  if (!plus_path.empty()) fd.path = plus_path;
  else if (!minus_path.empty()) fd.path = minus_path;
  if (hunk_start != std::string_view::npos) fd.patch_text = rstrip(section.substr(hunk_start)) + "\n";
  fd.language = language_of(fd.path);
  return fd;
}

std::string repo_path_from_url(const std::string& url) {
  if (url.starts_with("file://")) return url.substr(7);
  return url;
}

std::vector<CommitRecord> parse_log(std::string_view out, bool with_patch) {
  std::vector<CommitRecord> commits;
  for (std::string_view record : split(out, kRecordSep)) {
    if (record.find_first_not_of(" \n") == std::string_view::npos) continue;
    auto fields = split(record, kFieldSep);
    if (fields.size() < 3) throw Error(Errc::repo_access, "unexpected git log output");
    CommitRecord c;
    c.sha = std::string(fields[0]);
    c.message = rstrip(fields[1]);
    const std::string_view body = fields[2];
    if (with_patch) {
      c.files = parse_unified_diff(body);
    } else {
      std::size_t pos = 0;
      while (pos < body.size()) {
        const auto end = std::min(body.find('\n', pos), body.size());
        std::string_view line = body.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        FileDiff fd;
        fd.path = unquote_path(line);
        fd.language = language_of(fd.path);
        c.files.push_back(std::move(fd));
      }
    }
    commits.push_back(std::move(c));
  }
  return commits;
}

}  // namespace

Language language_of(std::string_view path) noexcept {
  const auto slash = path.rfind('/');
  const std::string_view name = slash == std::string_view::npos ? path : path.substr(slash + 1);
  const auto dot = name.rfind('.');
  if (dot == std::string_view::npos || dot == 0) return Language::Other;
  std::string ext(name.substr(dot + 1));
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == "c" || ext == "h" || ext == "cc" || ext == "cpp" || ext == "hpp") return Language::CCpp;
  if (ext == "py") return Language::Python;
  if (ext == "ts" || ext == "tsx") return Language::TypeScript;
  if (ext == "js" || ext == "jsx") return Language::JavaScript;
  if (ext == "php") return Language::PHP;
  if (ext == "java") return Language::Java;
  if (ext == "rb") return Language::Ruby;
  if (ext == "cs") return Language::CSharp;
  if (ext == "go") return Language::Go;
  return Language::Other;
}

std::string_view language_name(Language lang) noexcept { return kLanguageNames[static_cast<std::size_t>(lang)]; }

Language parse_language(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kLanguageNames.size(); ++i)
    if (kLanguageNames[i] == name) return static_cast<Language>(i);
  return Language::Other;
}

std::vector<FileDiff> parse_unified_diff(std::string_view diff) {
  std::vector<FileDiff> files;
  std::vector<std::size_t> starts;
  std::size_t pos = 0;
  while (pos < diff.size()) {
    if (diff.substr(pos).starts_with("diff --git ")) starts.push_back(pos);
    const auto nl = diff.find('\n', pos);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const std::size_t end = i + 1 < starts.size() ? starts[i + 1] : diff.size();
    files.push_back(parse_file_section(diff.substr(starts[i], end - starts[i])));
  }
  return files;
}

GitRepository::GitRepository(std::filesystem::path path) : path_(std::move(path)) {}

GitRepository GitRepository::open(const std::string& repo_url, const std::filesystem::path& cache_dir) {
  const std::string local = repo_path_from_url(repo_url);
  if (local.starts_with("/")) {
    if (!std::filesystem::exists(local)) throw Error(Errc::repo_access, "repository path does not exist: " + local);
    return GitRepository(local);
  }
  if (repo_url.empty()) throw Error(Errc::repo_access, "no repository URL");
  const auto target = cache_dir / hex64(fnv1a64(normalize_repo_url(repo_url)));
  if (!std::filesystem::exists(target / "HEAD")) {
    std::filesystem::create_directories(cache_dir);
    auto r = run_process({"git", "clone", "--quiet", "--bare", repo_url, target.string()});
    if (r.exit_code != 0) throw Error(Errc::repo_access, "git clone failed for " + repo_url + ": " + r.err);
  }
  return GitRepository(target);
}

std::string GitRepository::git(const std::vector<std::string>& args) const {
  std::vector<std::string> argv{"git", "-C", path_.string(), "-c", "core.quotePath=false",
                                "-c", "log.showSignature=false"};
  argv.insert(argv.end(), args.begin(), args.end());
  auto r = run_process(argv);
  if (r.exit_code != 0) throw Error(Errc::repo_access, "git " + (args.empty() ? "" : args[0]) + " failed: " + r.err);
  return std::move(r.out);
}

std::vector<std::string> GitRepository::tags() const {
  const std::string out = git({"tag", "--list"});
  std::vector<std::string> tags;
  for (auto line : split(out, '\n'))
    if (!line.empty()) tags.emplace_back(line);
  return tags;
}

CommitWindow GitRepository::enumerate_window(const VersionTag& prior, const VersionTag& fixed) const {
  const std::string format = std::string("--format=") + kRecordSep + "%H" + kFieldSep + "%B" + kFieldSep;
  const std::string range = "refs/tags/" + prior.raw + "..refs/tags/" + fixed.raw;
  const std::string out = git({"log", "--reverse", "--date-order", "--no-color", "--no-ext-diff", "--no-renames",
                               "--diff-merges=first-parent", "--patch", format, range, "--"});

  CommitWindow w;
  w.fixed_tag = fixed;
  w.prior_tag = prior;
  w.commits = parse_log(out, true);
  if (w.commits.empty())
    throw Error(Errc::empty_window, "no commits between " + prior.raw + " and " + fixed.raw);
  w.total = w.commits.size();
  for (std::size_t i = 0; i < w.commits.size(); ++i) w.commits[i].rank = i + 1;
  w.oversized = w.total > kLargeWindow;
  return w;
}

std::vector<CommitRecord> GitRepository::history() const {
  const std::string format = std::string("--format=") + kRecordSep + "%H" + kFieldSep + "%B" + kFieldSep;
  const std::string out = git({"log", "--all", "--reverse", "--date-order", "--no-renames",
                               "--diff-merges=first-parent", "--name-only", format, "--"});
  auto commits = parse_log(out, false);
  for (std::size_t i = 0; i < commits.size(); ++i) commits[i].rank = i + 1;
  return commits;
}

CommitWindow mine_window(const GitRepository& repo, std::string_view fixed_version) {
  const auto sorted = sort_tags(repo.tags());
  const VersionTag& fixed = find_tag(fixed_version, sorted.tags);
  const VersionTag prior = select_prior(fixed_version, sorted.tags);
  return repo.enumerate_window(prior, fixed);
}

void write_window_records(std::ostream& out, const CommitWindow& window) {
  auto base = [&](const CommitRecord& c) {
    json rec;
    rec["fixed_tag"] = window.fixed_tag.raw;
    rec["prior_tag"] = window.prior_tag.raw;
    rec["total"] = window.total;
    rec["sha"] = c.sha;
    rec["rank"] = c.rank;
    rec["message"] = c.message;
    return rec;
  };
  for (const auto& c : window.commits) {
    if (c.files.empty()) {
      json rec = base(c);
      rec["path"] = "";
      rec["language"] = language_name(Language::Other);
      rec["patch_text"] = "";
      rec["additions"] = 0;
      rec["deletions"] = 0;
      rec["binary"] = false;
      out << rec.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
      continue;
    }
    for (const auto& f : c.files) {
      json rec = base(c);
      rec["path"] = f.path;
      rec["language"] = language_name(f.language);
      rec["patch_text"] = f.patch_text;
      rec["additions"] = f.additions;
      rec["deletions"] = f.deletions;
      rec["binary"] = f.binary;
      out << rec.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    }
  }
}

std::vector<CommitWindow> read_window_records(std::istream& in) {
  std::vector<CommitWindow> windows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(Errc::malformed_document, std::string("bad window record: ") + e.what());
    }
    const std::string fixed = rec.at("fixed_tag").get<std::string>();
    const std::string prior = rec.at("prior_tag").get<std::string>();
    const std::string sha = rec.at("sha").get<std::string>();
    const std::size_t rank = rec.at("rank").get<std::size_t>();
    if (windows.empty() || windows.back().fixed_tag.raw != fixed || windows.back().prior_tag.raw != prior ||
        rank < windows.back().commits.back().rank ||
        (rank == windows.back().commits.back().rank && sha != windows.back().commits.back().sha)) {
      CommitWindow w;
      w.fixed_tag = VersionTag{fixed, parse_version(fixed).value_or(VersionKey{})};
      w.prior_tag = VersionTag{prior, parse_version(prior).value_or(VersionKey{})};
      w.total = rec.at("total").get<std::size_t>();
      windows.push_back(std::move(w));
    }
    auto& w = windows.back();
    if (w.commits.empty() || w.commits.back().sha != sha) {
      CommitRecord c;
      c.sha = sha;
      c.rank = rank;
      c.message = rec.at("message").get<std::string>();
      w.commits.push_back(std::move(c));
    }
    const std::string path = rec.at("path").get<std::string>();
    if (!path.empty()) {
      FileDiff f;
      f.path = path;
      f.language = parse_language(rec.at("language").get<std::string>());
      f.patch_text = rec.at("patch_text").get<std::string>();
      f.additions = rec.at("additions").get<std::uint32_t>();
      f.deletions = rec.at("deletions").get<std::uint32_t>();
      f.binary = rec.value("binary", false);
      w.commits.back().files.push_back(std::move(f));
    }
  }
  for (auto& w : windows) w.oversized = w.total > kLargeWindow;
  return windows;
}

}  // namespace patchlink
