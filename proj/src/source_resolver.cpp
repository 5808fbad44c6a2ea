#include "patchlink/source_resolver.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "patchlink/advisory.hpp"
#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"

namespace patchlink {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// https://host/owner/repo after normalization, for the hosts we accept.
bool is_repo_root(const std::string& url) {
  for (std::string_view host : {"https://github.com/", "https://gitlab.com/", "https://bitbucket.org/"}) {
    if (!url.starts_with(host)) continue;
    const std::string_view rest = std::string_view(url).substr(host.size());
    const auto slash = rest.find('/');
    return slash != std::string_view::npos && slash > 0 && slash + 1 < rest.size() &&
           rest.find('/', slash + 1) == std::string_view::npos;
  }
  return false;
}

std::string html_unescape(std::string s) {
  static const std::pair<std::string_view, std::string_view> kEntities[] = {
      {"&amp;", "&"}, {"&quot;", "\""}, {"&#39;", "'"}, {"&lt;", "<"}, {"&gt;", ">"}};
  for (const auto& [from, to] : kEntities) {
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
      s.replace(pos, from.size(), to);
  }
  return s;
}

std::string element_text(std::string_view xml, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  const auto b = xml.find(open);
  if (b == std::string_view::npos) return {};
  const auto e = xml.find(close, b + open.size());
  if (e == std::string_view::npos) return {};
  std::string text(xml.substr(b + open.size(), e - b - open.size()));
  const auto first = text.find_first_not_of(" \t\r\n");
  const auto last = text.find_last_not_of(" \t\r\n");
  return first == std::string::npos ? std::string{} : html_unescape(text.substr(first, last - first + 1));
}

std::string url_component(std::string_view s) {
  // Package names are plain identifiers; escape anything else.
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '@' || c == '/') {
      out += static_cast<char>(c);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

FetchResponse fetch_checked(Fetcher& fetch, const std::string& url) {
  FetchResponse r = fetch.get(url);
  if (r.status == 404) throw Error(Errc::not_found, "registry has no entry at " + url);
  if (r.status != 200)
    throw Error(Errc::registry_unreachable, "registry returned HTTP " + std::to_string(r.status) + " for " + url);
  return r;
}

std::string resolve_maven(const RegistryQuery& q, Fetcher& fetch) {
  const auto colon = q.package.find(':');
  const std::string group = q.package.substr(0, colon);
  const std::string artifact = q.package.substr(colon + 1);

  const FetchResponse search = fetch_checked(fetch, maven_search_url(group, artifact));
  std::string version;
  try {
    const auto doc = nlohmann::json::parse(search.body);
    for (const auto& d : doc.at("response").at("docs")) {
      if (d.value("g", "") == group && d.value("a", "") == artifact) {
        version = d.value("latestVersion", d.value("v", ""));
        break;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::registry_unreachable, std::string("unreadable Maven search response: ") + e.what());
  }
  if (version.empty()) throw Error(Errc::not_found, "no Maven artifact matches " + q.package);

  const FetchResponse pom = fetch_checked(fetch, maven_pom_url(group, artifact, version));
  std::string repo = pom_scm_repo(pom.body);
  if (repo.empty()) throw Error(Errc::not_found, "POM for " + q.package + " " + version + " has no repository scm tag");
  return repo;
}

std::string resolve_project_page(const RegistryQuery& q, Fetcher& fetch) {
  const FetchResponse page = fetch_checked(fetch, project_page_url(q));
  const auto links = project_repo_links(page.body);
  if (links.empty()) throw Error(Errc::not_found, "no repository link on the project page of " + q.package);
  if (links.size() > 1) {
    std::string all;
    for (const auto& l : links) all += " " + l;
    throw Error(Errc::ambiguous_match, "several repositories linked from " + q.package + ":" + all);
  }
  return links.front();
}

}  // namespace

std::string fixture_key(std::string_view url) { return hex64(fnv1a64(url)); }

FetchResponse FixtureFetcher::get(const std::string& url) {
  std::ifstream in(dir_ / fixture_key(url), std::ios::binary);
  if (!in) return {404, {}};
  std::stringstream ss;
  ss << in.rdbuf();
  return {200, ss.str()};
}

FetchResponse LiveFetcher::get(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::invalid_argument, "not an absolute URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client cli(origin);
  cli.set_follow_location(true);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  auto res = cli.Get(path);
  if (!res) throw Error(Errc::registry_unreachable, "request to " + url + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

FetchResponse ThrottledFetcher::get(const std::string& url) {
  {
    std::lock_guard lock(mu_);
    if (called_) {
      const auto next = last_ + gap_;
      const auto now = std::chrono::steady_clock::now();
      if (now < next) std::this_thread::sleep_for(next - now);
    }
    last_ = std::chrono::steady_clock::now();
    called_ = true;
  }
  return inner_->get(url);
}

RegistryQuery make_query(std::string_view ecosystem, std::string_view package) {
  RegistryQuery q;
  q.registry = std::string(ecosystem);
  q.package = std::string(package);
  if (lower(ecosystem) == "maven") {
    q.kind = RegistryKind::Maven;
    if (std::count(package.begin(), package.end(), ':') != 1 || package.front() == ':' || package.back() == ':')
      throw Error(Errc::invalid_argument, "Maven package must be groupId:artifactId, got '" + q.package + "'");
    return q;
  }
  q.kind = RegistryKind::ProjectPage;
  project_page_url(q);  // validates the ecosystem
  return q;
}

std::string project_page_url(const RegistryQuery& q) {
  static const std::pair<std::string_view, std::string_view> kPages[] = {
      {"pypi", "https://pypi.org/project/{}/"},
      {"npm", "https://www.npmjs.com/package/{}"},
      {"rubygems", "https://rubygems.org/gems/{}"},
      {"packagist", "https://packagist.org/packages/{}"},
      {"nuget", "https://www.nuget.org/packages/{}"},
      {"crates.io", "https://crates.io/crates/{}"},
      {"go", "https://pkg.go.dev/{}"},
  };
  const std::string eco = lower(q.registry);
  for (const auto& [name, tmpl] : kPages) {
    if (name != eco) continue;
    std::string url(tmpl);
    url.replace(url.find("{}"), 2, url_component(q.package));
    return url;
  }
  throw Error(Errc::invalid_argument, "no project page known for ecosystem '" + q.registry + "'");
}

std::string maven_search_url(std::string_view group_id, std::string_view artifact_id) {
  return "https://search.maven.org/solrsearch/select?q=" + url_component(group_id) +
         "+AND+a:" + url_component(artifact_id) + "&rows=10&wt=json";
}

std::string maven_pom_url(std::string_view group_id, std::string_view artifact_id, std::string_view version) {
  std::string group_path(group_id);
  std::replace(group_path.begin(), group_path.end(), '.', '/');
  const std::string a = url_component(artifact_id);
  const std::string v = url_component(version);
  return "https://search.maven.org/remotecontent?filepath=" + url_component(group_path) + "/" + a + "/" + v + "/" + a +
         "-" + v + ".pom";
}

std::vector<std::string> project_repo_links(std::string_view html) {
  std::string_view region = html;
  if (const auto marker = html.find("Project links"); marker != std::string_view::npos) {
    const auto end = html.find("</ul>", marker);
    region = html.substr(marker, end == std::string_view::npos ? std::string_view::npos : end - marker);
  }
  static const std::regex href(R"(href\s*=\s*["']([^"']+)["'])", std::regex::icase);
  std::vector<std::string> out;
  const std::string text(region);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), href); it != std::sregex_iterator(); ++it) {
    const std::string url = normalize_repo_url(html_unescape((*it)[1].str()));
    if (is_repo_root(url) && std::find(out.begin(), out.end(), url) == out.end()) out.push_back(url);
  }
  return out;
}

std::string pom_scm_repo(std::string_view pom) {
  const auto b = pom.find("<scm>");
  if (b == std::string_view::npos) return {};
  const auto e = pom.find("</scm>", b);
  const std::string_view scm = pom.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b);
  for (std::string_view tag : {"connection", "developerConnection", "url"}) {
    const std::string url = normalize_repo_url(element_text(scm, tag));
    if (is_repo_root(url)) return url;
  }
  return {};
}

std::string resolve_source_url(const RegistryQuery& q, Fetcher& fetch) {
  return q.kind == RegistryKind::Maven ? resolve_maven(q, fetch) : resolve_project_page(q, fetch);
}

}  // namespace patchlink
