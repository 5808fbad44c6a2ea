#include <doctest.h>

#include <chrono>

#include "patchlink/error.hpp"
#include "patchlink/source_resolver.hpp"

using namespace patchlink;

namespace {

const std::filesystem::path kRegistry = std::filesystem::path(PATCHLINK_FIXTURES) / "registry";

Errc resolve_error(const RegistryQuery& q, Fetcher& f) {
  try {
    resolve_source_url(q, f);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("resolved unexpectedly");
  return Errc::invalid_argument;
}

struct Unreachable final : Fetcher {
  FetchResponse get(const std::string&) override { throw Error(Errc::registry_unreachable, "down"); }
};

struct Counting final : Fetcher {
  std::vector<std::chrono::steady_clock::time_point> at;
  FetchResponse get(const std::string&) override {
    at.push_back(std::chrono::steady_clock::now());
    return {404, ""};
  }
};

}  // namespace

TEST_CASE("project page registries") {
  FixtureFetcher f(kRegistry);
  CHECK(resolve_source_url(make_query("PyPI", "bleach"), f) == "https://github.com/mozilla/bleach");
  CHECK(resolve_error(make_query("PyPI", "no-such-pkg-zz"), f) == Errc::not_found);
  CHECK(resolve_error(make_query("PyPI", "twofaced"), f) == Errc::ambiguous_match);
  CHECK(resolve_error(make_query("PyPI", "nolinks"), f) == Errc::not_found);
  Unreachable down;
  CHECK(resolve_error(make_query("PyPI", "bleach"), down) == Errc::registry_unreachable);
}

TEST_CASE("maven") {
  FixtureFetcher f(kRegistry);
  const auto q = make_query("Maven", "org.springframework.security:spring-security-core");
  CHECK(q.kind == RegistryKind::Maven);
  CHECK(resolve_source_url(q, f) == "https://github.com/spring-projects/spring-security");
  CHECK(resolve_error(make_query("Maven", "com.example:noscm"), f) == Errc::not_found);
  CHECK(maven_pom_url("a.b", "c", "1.0") == "https://search.maven.org/remotecontent?filepath=a/b/c/1.0/c-1.0.pom");
}

TEST_CASE("queries") {
  CHECK(make_query("npm", "left-pad").kind == RegistryKind::ProjectPage);
  CHECK(project_page_url(make_query("PyPI", "bleach")) == "https://pypi.org/project/bleach/");
  CHECK_THROWS_AS(make_query("Maven", "no-colon"), Error);
  CHECK_THROWS_AS(make_query("Maven", "a:b:c"), Error);
  CHECK_THROWS_AS(make_query("NoSuchEcosystem", "x"), Error);
}

TEST_CASE("page scraping") {
  const std::string page =
      "<a href=\"https://github.com/elsewhere/nav\">nav</a>"
      "<h3>Project links</h3><ul>"
      "<li><a href=\"https://github.com/Owner/Proj/issues\">Issues</a></li>"
      "<li><a href=\"https://github.com/Owner/Proj.git\">Source</a></li>"
      "</ul><footer><a href=\"https://github.com/pypi/warehouse\">w</a></footer>";
  CHECK(project_repo_links(page) == std::vector<std::string>{"https://github.com/Owner/Proj"});
  CHECK(project_repo_links("<p>no links</p>").empty());
  CHECK(pom_scm_repo("<project><scm><url>https://github.com/a/b</url></scm></project>") == "https://github.com/a/b");
  CHECK(pom_scm_repo("<project/>").empty());
}

TEST_CASE("fixture keys and throttling") {
  CHECK(fixture_key("https://pypi.org/project/bleach/") == "0a88881646daa8af");
  CHECK(fixture_key("a") != fixture_key("b"));

  Counting inner;
  ThrottledFetcher t(inner, std::chrono::milliseconds(40));
  for (int i = 0; i < 4; ++i) CHECK(t.get("u").status == 404);
  REQUIRE(inner.at.size() == 4);
  for (std::size_t i = 1; i < inner.at.size(); ++i)
    CHECK(inner.at[i] - inner.at[i - 1] >= std::chrono::milliseconds(40));
}
