#include "synth.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "patchlink/hashing.hpp"
#include "patchlink/process.hpp"

namespace patchlink::synth {

namespace {

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {  // inclusive
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

bool chance(std::mt19937_64& rng, double p) { return unit_uniform(rng) < p; }

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& items) {
  return items[static_cast<std::size_t>(rng() % items.size())];
}

double standard_normal(std::mt19937_64& rng) {
  // Box-Muller over our own uniforms, so draws match across standard libraries.
  const double u1 = std::max(unit_uniform(rng), 1e-300);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void check(const ProcessResult& r, const std::string& what) {
  if (r.exit_code != 0) throw std::runtime_error(what + " failed: " + r.err);
}

}  // namespace

TempDir::TempDir(const std::string& prefix) {
  std::string tmpl = (fs::temp_directory_path() / (prefix + "-XXXXXX")).string();
  if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<std::string> build_repo(const RepoSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  check(run_process({"git", "init", "-q", "-b", "main", dir.string()}), "git init");

  std::ostringstream s;
  const std::int64_t base = 1600000000;
  // File contents per node, inherited from the first parent.
  std::vector<std::map<std::string, std::string>> trees(spec.nodes.size());
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const Node& n = spec.nodes[i];
    if (!n.parents.empty()) trees[i] = trees[n.parents[0]];
    for (const auto& [path, line] : n.appends) trees[i][path] += line + "\n";

    const std::int64_t t = base + 60 * static_cast<std::int64_t>(i);
    s << "commit refs/heads/" << n.branch << "\n";
    s << "mark :" << (i + 1) << "\n";
    s << "author Synth Dev <dev@example.com> " << t << " +0000\n";
    s << "committer Synth Dev <dev@example.com> " << t << " +0000\n";
    s << "data " << n.message.size() << "\n" << n.message << "\n";
    for (std::size_t p = 0; p < n.parents.size(); ++p)
      s << (p == 0 ? "from :" : "merge :") << (n.parents[p] + 1) << "\n";
    // Merges take the longer side of each file.
    std::set<std::string> touched;
    for (const auto& [path, line] : n.appends) touched.insert(path);
    for (std::size_t p = 1; p < n.parents.size(); ++p)
      for (const auto& [path, body] : trees[n.parents[p]])
        if (!trees[i].contains(path) || trees[i][path].size() < body.size()) {
          trees[i][path] = body;
          touched.insert(path);
        }
    for (const auto& path : touched) {
      const std::string& body = trees[i][path];
      s << "M 100644 inline " << path << "\n" << "data " << body.size() << "\n" << body << "\n";
    }
  }
  for (const auto& tag : spec.tags) s << "reset refs/tags/" << tag.name << "\nfrom :" << (tag.node + 1) << "\n\n";
  s << "done\n";

  const fs::path marks = dir / ".git" / "synth-marks";
  check(run_process({"git", "-C", dir.string(), "fast-import", "--quiet", "--done", "--export-marks=" + marks.string()},
                    s.str()),
        "git fast-import");

  std::vector<std::string> shas(spec.nodes.size());
  std::ifstream in(marks);
  std::string mark, sha;
  while (in >> mark >> sha) shas[std::stoul(mark.substr(1)) - 1] = sha;
  for (const auto& x : shas)
    if (x.empty()) throw std::runtime_error("fast-import did not report every commit");
  return shas;
}

std::vector<char> reachable(const RepoSpec& spec, std::size_t from) {
  std::vector<char> seen(spec.nodes.size(), 0);
  std::vector<std::size_t> stack{from};
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    if (seen[n]) continue;
    seen[n] = 1;
    for (std::size_t p : spec.nodes[n].parents) stack.push_back(p);
  }
  return seen;
}

TaggedRepo random_tagged_repo(std::mt19937_64& rng) {
  TaggedRepo out;
  RepoSpec& spec = out.spec;
  std::size_t counter = 0;
  auto add = [&](std::vector<std::size_t> parents, const std::string& branch) {
    Node n;
    n.parents = std::move(parents);
    n.branch = branch;
    n.message = "change " + std::to_string(counter);
    n.appends.push_back({"src/file" + std::to_string(counter % 5) + ".py", "x = " + std::to_string(counter)});
    ++counter;
    spec.nodes.push_back(std::move(n));
    return spec.nodes.size() - 1;
  };
  static const char* kPre[] = {"alpha", "beta", "rc"};
  auto render = [&](const VersionTuple& v) {
    std::string core = std::to_string(v.major) + "." + std::to_string(v.minor);
    if (v.patch != 0 || v.phase == 0 || !chance(rng, 0.2)) core += "." + std::to_string(v.patch);
    if (v.phase == 0) {
      const std::string kind = kPre[v.pre_kind];
      core += chance(rng, 0.5) ? "-" + kind + "." + std::to_string(v.pre_num) : kind + std::to_string(v.pre_num);
    }
    return chance(rng, 0.5) ? "v" + core : core;
  };
  auto tag = [&](std::size_t node, const VersionTuple& v) {
    const std::string name = render(v);
    spec.tags.push_back({name, node});
    out.version_tags.push_back({name, node, v});
  };

  std::size_t main_tip = add({}, "main");
  VersionTuple current{1, 0, 0, 1, 0, 0};
  std::vector<std::size_t> open_branches;
  const std::size_t releases = uniform(rng, 4, 9);
  for (std::size_t r = 0; r < releases; ++r) {
    const std::size_t gap = chance(rng, 0.3) ? uniform(rng, 1, 5) : uniform(rng, 1, 60);
    for (std::size_t k = 0; k < gap; ++k) {
      if (!open_branches.empty() && chance(rng, 0.05)) {
        const std::size_t b = open_branches.back();
        open_branches.pop_back();
        main_tip = add({main_tip, b}, "main");
        spec.nodes[main_tip].message = "Merge maintenance branch";
      } else {
        main_tip = add({main_tip}, "main");
      }
    }
    if (r > 0) {
      if (chance(rng, 0.2)) {
        ++current.major;
        current.minor = 0;
      } else {
        ++current.minor;
      }
      current.patch = 0;
    }
    // A pre-release a few commits before the release.
    if (r > 0 && chance(rng, 0.25) && gap > 2) {
      VersionTuple pre = current;
      pre.phase = 0;
      pre.pre_kind = static_cast<int>(uniform(rng, 0, 2));
      pre.pre_num = static_cast<int>(uniform(rng, 1, 3));
      tag(spec.nodes[main_tip].parents[0], pre);
    }
    tag(main_tip, current);

    if (chance(rng, 0.4)) {
      const std::string branch = "maint-" + std::to_string(r);
      std::size_t tip = main_tip;
      VersionTuple patch = current;
      const std::size_t patches = uniform(rng, 1, 2);
      for (std::size_t p = 0; p < patches; ++p) {
        const std::size_t m = uniform(rng, 1, 10);
        for (std::size_t k = 0; k < m; ++k) tip = add({tip}, branch);
        ++patch.patch;
        tag(tip, patch);
      }
      open_branches.push_back(tip);
    }
  }
  // Junk tags that must be ignored.
  static const std::vector<std::string> kJunk = {"latest", "release-candidate", "nightly", "stable", "deploy-prod"};
  const std::size_t junk = uniform(rng, 0, 2);
  for (std::size_t j = 0; j < junk; ++j) {
    const std::string name = kJunk[j];
    spec.tags.push_back({name, uniform(rng, 0, spec.nodes.size() - 1)});
    out.junk_tags.push_back(name);
  }
  return out;
}

std::string random_ghsa(std::mt19937_64& rng) {
  static const std::string kAlphabet = "23456789cfghjmpqrvwx";
  std::string id = "GHSA";
  for (int g = 0; g < 3; ++g) {
    id += '-';
    for (int k = 0; k < 4; ++k) id += kAlphabet[rng() % kAlphabet.size()];
  }
  return id;
}

// --- advisory corpora ------------------------------------------------------

namespace {

struct ClassTemplate {
  std::string owasp;
  std::string cwe;
  std::string summary;  // {c} is the component
  std::string details;
  std::vector<std::string> messages;
  std::vector<std::string> diff_lines;
};

const std::vector<ClassTemplate>& class_templates() {
  static const std::vector<ClassTemplate> kTemplates = {
      {"A01", "CWE-22", "Path traversal in {c} download handler",
       "The {c} download handler joins user paths without checking permission, so an attacker can read files "
       "outside the directory.",
       {"Fix path traversal in {c} download handler", "Check directory permission before {c} file access"},
       {"if not permission(user, path): raise unauthorized", "path = normalize(path)  # block traversal"}},
      {"A02", "CWE-327", "Weak encryption of {c} tokens",
       "Tokens issued by {c} use md5 and a predictable random source, weakening encryption.",
       {"Use secure random and stronger crypto for {c} tokens", "Replace md5 cipher in {c} encryption"},
       {"key = crypto.random_bytes(32)  # replace md5", "cipher = encryption.new(key, nonce)"}},
      {"A03", "CWE-79", "Cross-site scripting in {c} templates",
       "User input reaches the {c} html template without escaping, allowing script injection (XSS).",
       {"Escape user input in {c} template to prevent XSS", "Sanitize html in {c} output to stop script injection"},
       {"html = escape(sanitize(value))", "out = template.render(escape(html))  # xss"}},
      {"A04", "CWE-840", "Missing rate limit in {c} upload workflow",
       "The {c} upload workflow has no rate limit, so a client can exhaust the quota.",
       {"Add rate limit to {c} upload workflow", "Enforce upload quota in {c} workflow"},
       {"if rate.limit_exceeded(quota): reject(upload)", "workflow.enforce(rate, limit)"}},
      {"A05", "CWE-611", "XML external entity expansion in {c} config loader",
       "The {c} config loader resolves external entity references by default (XXE).",
       {"Disable XXE entity expansion in {c} config loader", "Secure default parser configuration for {c}"},
       {"parser.set(entity=False)  # disable xxe", "config.default(secure=True)"}},
      {"A07", "CWE-287", "Authentication bypass in {c} login",
       "The {c} login accepts an empty password, letting an attacker bypass authentication and take over a session.",
       {"Fix authentication bypass in {c} login", "Verify password and credential before {c} session"},
       {"if not verify(password, credential): deny(session)", "login.require(authentication)"}},
      {"A08", "CWE-502", "Unsafe deserialization in {c} loader",
       "The {c} loader calls pickle on untrusted payloads, allowing arbitrary code through deserialization.",
       {"Prevent unsafe deserialization in {c} loader", "Stop unpickling untrusted {c} payloads"},
       {"data = yaml.safe_load(payload)  # no pickle deserialize", "verify(signature, integrity)"}},
      {"A09", "CWE-778", "Failed {c} logins are not logged",
       "Failed attempts against {c} are not written to the audit log, hiding attacks from monitor tooling.",
       {"Log failed {c} access attempts to audit log", "Add audit logging for {c} security events"},
       {"logger.audit(security_event)", "log.warning(audit, monitor)"}},
      {"A10", "CWE-918", "Server-side request forgery via {c} webhook url",
       "The {c} webhook fetches any url, so an attacker can reach internal hosts through SSRF.",
       {"Block SSRF via {c} webhook url", "Reject private host in {c} webhook fetch"},
       {"if private(host(url)): reject(fetch)", "proxy.deny(redirect, hostname)  # ssrf"}},
      {"OTHER", "CWE-120", "Buffer overflow in {c} parser",
       "A crafted input overflows a buffer in the {c} parser and can crash the process.",
       {"Fix buffer overflow in {c} parser", "Check bounds in {c} parser to prevent overflow"},
       {"if length > bounds: raise overflow  # prevent crash", "buffer = memory.alloc(checked(length))"}},
  };
  return kTemplates;
}

const std::vector<std::string> kComponents = {"parser", "render", "export", "router", "cache", "report", "image",
                                              "mailer", "search", "billing", "admin", "gateway", "queue", "scheduler",
                                              "plugin", "theme", "widget", "catalog", "invoice", "profile"};

const std::vector<std::string> kMundane = {
    "Update README for {c}", "Refactor {c} module", "Bump dependencies", "Add tests for {c}", "Fix typo in {c} docs",
    "Improve {c} performance", "Rename helpers in {c}", "Clean up {c} imports", "Add changelog entry",
    "Tidy {c} formatting", "Simplify {c} internals", "Document {c} options", "Speed up {c} startup",
    "Fix flaky {c} test", "Support new {c} option"};

const std::vector<std::string> kNeutralCode = {"result = compute(a, b)", "items.append(value)",
                                               "return total / count", "name = name.strip()",
                                               "for item in items: process(item)", "count += 1",
                                               "options = merge(defaults, overrides)", "print(summary)"};

struct LangSpec {
  std::string ext;
  std::string ecosystem;
};

const std::vector<LangSpec> kLanguages = {{".py", "PyPI"},   {".js", "npm"},     {".java", "Maven"},
                                          {".php", "Packagist"}, {".go", "Go"},   {".rb", "RubyGems"},
                                          {".c", "OSS-Fuzz"}, {".ts", "npm"},     {".cs", "NuGet"}};

std::string fill(std::string text, const std::string& component) {
  for (std::size_t pos; (pos = text.find("{c}")) != std::string::npos;) text.replace(pos, 3, component);
  return text;
}

std::size_t window_size(std::mt19937_64& rng, const CorpusParams& p) {
  const double v = std::exp(std::log(p.median_window) + 0.6 * standard_normal(rng));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(v)), 1, p.max_window);
}

// Beta(2,1) position: sqrt of a uniform, scaled to the window and rounded.
std::size_t vfc_position(std::mt19937_64& rng, std::size_t size) {
  const double x = std::sqrt(unit_uniform(rng));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(x * static_cast<double>(size))), 1, size);
}

}  // namespace

SynthCorpus generate_corpus(const CorpusParams& params, const fs::path& dir) {
  std::mt19937_64 rng(params.seed);
  SynthCorpus corpus;
  fs::create_directories(dir / "repos");
  fs::create_directories(dir / "advisories");
  const auto& templates = class_templates();
  std::set<std::string> used_ids;

  std::size_t made = 0;
  for (std::size_t repo_index = 0; made < params.advisories; ++repo_index) {
    const LangSpec& lang = pick(rng, kLanguages);
    const std::string repo_name = "synth-" + std::to_string(repo_index);
    const fs::path repo_dir = dir / "repos" / repo_name;

    RepoSpec spec;
    std::size_t counter = 0;
    auto source_file = [&](const std::string& component) { return "src/" + component + lang.ext; };
    auto add = [&](std::size_t parent, const std::string& branch, const std::string& message,
                   std::vector<std::pair<std::string, std::string>> appends) {
      Node n;
      if (parent != SIZE_MAX) n.parents.push_back(parent);
      n.branch = branch;
      n.message = message;
      for (auto& [path, line] : appends) line += "  # " + std::to_string(counter);
      n.appends = std::move(appends);
      ++counter;
      spec.nodes.push_back(std::move(n));
      return spec.nodes.size() - 1;
    };
    auto mundane = [&](std::size_t parent, const std::string& branch) {
      const std::string& comp = pick(rng, kComponents);
      std::vector<std::pair<std::string, std::string>> appends{{source_file(comp), pick(rng, kNeutralCode)}};
      if (chance(rng, 0.3)) appends.push_back({source_file(pick(rng, kComponents)), pick(rng, kNeutralCode)});
      if (chance(rng, 0.1)) appends.push_back({"README.md", "Notes on " + comp});
      return add(parent, branch, fill(pick(rng, kMundane), comp), std::move(appends));
    };

    struct Pending {
      const ClassTemplate* cls;
      std::string component;
      std::string id;
      std::string cve;
      bool mention;
      std::vector<std::string> fixed;
      std::vector<std::size_t> vfc_nodes;
      std::vector<double> rank_norm;
      std::vector<std::size_t> sizes;
    };
    std::vector<Pending> pending;

    std::size_t tip = add(SIZE_MAX, "main", "Initial import", {{source_file("core"), "init()"}});
    for (std::size_t k = 0; k < 2; ++k) tip = mundane(tip, "main");
    spec.tags.push_back({"v1.0.0", tip});

    const std::size_t count = std::min(params.per_repo, params.advisories - made);
    std::vector<std::string> components = kComponents;
    seeded_shuffle(std::span<std::string>(components), rng);
    for (std::size_t a = 0; a < count; ++a) {
      Pending p;
      p.cls = &templates[rng() % templates.size()];
      p.component = components[a];
      do {
        p.id = random_ghsa(rng);
      } while (!used_ids.insert(p.id).second);
      p.cve = "CVE-2023-" + std::to_string(10000 + rng() % 89999);
      p.mention = chance(rng, params.id_mention_fraction);

      auto vfc_commit = [&](std::size_t parent, const std::string& branch) {
        std::string msg = fill(pick(rng, p.cls->messages), p.component);
        if (p.mention) msg += chance(rng, 0.5) ? " (" + p.id + ")" : " (" + p.cve + ")";
        std::vector<std::pair<std::string, std::string>> appends{
            {source_file(p.component), pick(rng, p.cls->diff_lines)}};
        if (chance(rng, 0.5)) appends.push_back({"tests/test_" + p.component + lang.ext, pick(rng, p.cls->diff_lines)});
        return add(parent, branch, msg, std::move(appends));
      };
      auto window = [&](std::size_t start, const std::string& branch) {
        const std::size_t size = window_size(rng, params);
        const std::size_t pos = vfc_position(rng, size);
        std::size_t decoy = 0;
        if (size > 1 && chance(rng, params.decoy_fraction)) {
          do {
            decoy = uniform(rng, 1, size);
          } while (decoy == pos);
        }
        std::size_t t = start;
        std::size_t vfc = 0;
        for (std::size_t i = 1; i <= size; ++i) {
          if (i == pos) {
            t = vfc = vfc_commit(t, branch);
          } else if (i == decoy) {
            const ClassTemplate& other = templates[rng() % templates.size()];
            std::string comp;
            do {
              comp = pick(rng, kComponents);
            } while (comp == p.component);
            t = add(t, branch, fill(pick(rng, other.messages), comp),
                    {{source_file(comp), pick(rng, other.diff_lines)}});
          } else {
            t = mundane(t, branch);
          }
        }
        p.vfc_nodes.push_back(vfc);
        p.rank_norm.push_back(static_cast<double>(pos) / static_cast<double>(size));
        p.sizes.push_back(size);
        return t;
      };

      const std::size_t release_start = tip;
      tip = window(tip, "main");
      const std::string fixed = "v1." + std::to_string(a + 1) + ".0";
      spec.tags.push_back({fixed, tip});
      p.fixed.push_back(fixed.substr(1));
      if (a > 0 && chance(rng, params.backport_fraction)) {
        // Backport onto the previous release; its window is the branch.
        const std::string branch = "maint-1." + std::to_string(a);
        const std::size_t btip = window(release_start, branch);
        const std::string patch = "v1." + std::to_string(a) + ".1";
        spec.tags.push_back({patch, btip});
        p.fixed.push_back(patch.substr(1));
      }
      pending.push_back(std::move(p));
    }
    // Tail after the last release so HEAD is not a tag.
    for (std::size_t k = 0; k < 2; ++k) tip = mundane(tip, "main");

    const auto shas = build_repo(spec, repo_dir);
    corpus.repos.push_back(repo_dir);

    for (auto& p : pending) {
      nlohmann::json events = nlohmann::json::array({{{"introduced", "0"}}});
      for (const auto& f : p.fixed) events.push_back({{"fixed", f}});
      nlohmann::json refs = nlohmann::json::array({{{"type", "PACKAGE"}, {"url", repo_dir.string()}}});
      SynthAdvisory sa;
      for (std::size_t w = 0; w < p.fixed.size(); ++w) {
        const std::string& sha = shas[p.vfc_nodes[w]];
        refs.push_back({{"type", "FIX"}, {"url", "https://github.com/synth/" + repo_name + "/commit/" + sha}});
        sa.vfc_shas.push_back(sha);
      }
      const nlohmann::json doc{
          {"id", p.id},
          {"aliases", {p.cve}},
          {"summary", fill(p.cls->summary, p.component)},
          {"details", fill(p.cls->details, p.component)},
          {"published", "2023-0" + std::to_string(1 + made % 9) + "-1" + std::to_string(made % 10) + "T12:00:00Z"},
          {"database_specific", {{"cwe_ids", {p.cls->cwe}}}},
          {"affected",
           {{{"package", {{"ecosystem", lang.ecosystem}, {"name", repo_name}}},
             {"ranges", {{{"type", "ECOSYSTEM"}, {"events", events}}}}}}},
          {"references", refs}};
      sa.file = dir / "advisories" / (p.id + ".json");
      std::ofstream(sa.file) << doc.dump(2) << '\n';
      sa.advisory = parse_advisory(doc.dump());
      sa.fixed_versions = p.fixed;
      sa.vfc_rank_norm = p.rank_norm;
      sa.window_sizes = p.sizes;
      corpus.advisories.push_back(std::move(sa));
      ++made;
    }
  }
  return corpus;
}

}  // namespace patchlink::synth
