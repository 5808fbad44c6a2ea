#pragma once

#include <chrono>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace patchlink {

struct FetchResponse {
  int status = 0;
  std::string body;
};

// HTTP GET capability. Implementations throw Error{registry_unreachable}
// when no response was obtained at all; HTTP error codes are returned.
class Fetcher {
 public:
  virtual ~Fetcher() = default;
  virtual FetchResponse get(const std::string& url) = 0;
};

// File name of the recorded response for `url` inside a fixture directory.
std::string fixture_key(std::string_view url);

// Serves `<dir>/<fixture_key(url)>`; absent files read as 404.
class FixtureFetcher final : public Fetcher {
 public:
  explicit FixtureFetcher(std::filesystem::path dir) : dir_(std::move(dir)) {}
  FetchResponse get(const std::string& url) override;

 private:
  std::filesystem::path dir_;
};

class LiveFetcher final : public Fetcher {
 public:
  explicit LiveFetcher(std::chrono::seconds timeout = std::chrono::seconds(20)) : timeout_(timeout) {}
  FetchResponse get(const std::string& url) override;

 private:
  std::chrono::seconds timeout_;
};

// Keeps at least `gap` between the starts of consecutive calls.
class ThrottledFetcher final : public Fetcher {
 public:
  explicit ThrottledFetcher(Fetcher& inner, std::chrono::milliseconds gap = std::chrono::milliseconds(250))
      : inner_(&inner), gap_(gap) {}
  FetchResponse get(const std::string& url) override;

 private:
  Fetcher* inner_;
  std::chrono::milliseconds gap_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point last_{};
  bool called_ = false;
};

enum class RegistryKind { ProjectPage, Maven };

struct RegistryQuery {
  RegistryKind kind = RegistryKind::ProjectPage;
  std::string registry;  // ecosystem name, e.g. "PyPI", "npm"
  std::string package;   // Maven: groupId:artifactId
};

// Builds a query from an ecosystem name as it appears in advisories.
// Throws Error{invalid_argument} for a Maven name without exactly one ':'
// or an ecosystem with no known project page.
RegistryQuery make_query(std::string_view ecosystem, std::string_view package);

std::string project_page_url(const RegistryQuery& q);
std::string maven_search_url(std::string_view group_id, std::string_view artifact_id);
std::string maven_pom_url(std::string_view group_id, std::string_view artifact_id, std::string_view version);

// Distinct normalized GitHub-style repositories linked from an HTML page,
// in order of appearance. Only the "Project links" list is scanned when the
// page has one.
std::vector<std::string> project_repo_links(std::string_view html);

// Repository named by the POM's <scm> element (connection,
// developerConnection, then url); empty if none points at a hosted repo.
std::string pom_scm_repo(std::string_view pom);

// Throws Error{not_found}, Error{ambiguous_match} or
// Error{registry_unreachable}. The result is normalized.
std::string resolve_source_url(const RegistryQuery& q, Fetcher& fetch);

}  // namespace patchlink
