#include <doctest.h>

#include <random>

#include "patchlink/advisory.hpp"
#include "patchlink/error.hpp"
#include "patchlink/pipeline.hpp"
#include "synth.hpp"

using namespace patchlink;

namespace {
const std::filesystem::path kFixtures = PATCHLINK_FIXTURES;

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::invalid_argument;
}
}  // namespace

TEST_CASE("advisory with two fixed versions") {
  const auto a = load_advisory(kFixtures / "advisories/GHSA-h47x-2j37-fw5m.json");
  CHECK(a.id == "GHSA-h47x-2j37-fw5m");
  CHECK(a.fixed_versions == std::vector<std::string>{"9.4.17", "8.2.12"});
  CHECK(a.package == PackageId{"Maven", "org.infinispan:infinispan-core"});
  CHECK(a.repo_url == "https://github.com/infinispan/infinispan");
  REQUIRE(a.fix_commits.size() == 2);
  CHECK(a.fix_commits[0] == "0a1b2c3d4e5f60718293a4b5c6d7e8f901234567");
  CHECK(a.cwe_ids == std::vector<std::string>{"CWE-74"});
  CHECK_FALSE(a.multi_cwe);
  CHECK(a.published == *parse_rfc3339("2020-09-25T17:19:08Z"));
}

TEST_CASE("aliases carry the CVE id") {
  const auto a = load_advisory(kFixtures / "advisories/GHSA-4fc4-4p5g-6w89.json");
  CHECK(a.aliases == std::vector<std::string>{"CVE-2022-24728"});
  CHECK(a.repo_url == "https://github.com/ckeditor/ckeditor4");
  CHECK(a.fixed_versions == std::vector<std::string>{"4.18.0"});
}

TEST_CASE("no references means no repository") {
  const auto a = load_advisory(kFixtures / "advisories/no-references.json");
  CHECK(a.repo_url.empty());
  CHECK(a.fix_commits.empty());
  CHECK(a.published_missing);
}

TEST_CASE("parse errors") {
  CHECK(code_of([] { parse_advisory("{not json"); }) == Errc::malformed_document);
  CHECK(code_of([] { parse_advisory("[1,2]"); }) == Errc::malformed_document);
  CHECK(code_of([] { parse_advisory(R"({"summary":"x"})"); }) == Errc::missing_id);
  CHECK(code_of([] { parse_advisory(R"({"id":7})"); }) == Errc::malformed_document);
}

TEST_CASE("round trip is loss-free") {
  for (const char* f : {"GHSA-h47x-2j37-fw5m.json", "GHSA-4fc4-4p5g-6w89.json", "no-references.json"}) {
    const auto a = load_advisory(kFixtures / "advisories" / f);
    CHECK(parse_advisory(to_osv_json(a)) == a);
  }
  // Random advisories.
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    Advisory a;
    a.id = synth::random_ghsa(rng);
    for (std::size_t k = 0; k < rng() % 3; ++k) a.aliases.push_back("CVE-2020-" + std::to_string(1000 + rng() % 9000));
    std::sort(a.aliases.begin(), a.aliases.end());
    a.aliases.erase(std::unique(a.aliases.begin(), a.aliases.end()), a.aliases.end());
    a.summary = "summary \"quoted\" " + std::to_string(rng());
    a.details = "line one\nline two\t\xc3\xa9";
    for (std::size_t k = 0; k < rng() % 3; ++k) a.cwe_ids.push_back("CWE-" + std::to_string(rng() % 1000));
    a.multi_cwe = a.cwe_ids.size() > 1;
    a.package = {"PyPI", "pkg" + std::to_string(i)};
    for (std::size_t k = 0; k < 1 + rng() % 3; ++k) a.fixed_versions.push_back("1." + std::to_string(k) + ".0");
    if (rng() % 2) a.references.push_back({"PACKAGE", "https://github.com/o/r" + std::to_string(i)});
    a.references.push_back({"FIX", "https://github.com/o/r/commit/abcdef1234567" + std::to_string(i % 10)});
    a.published = 1600000000 + static_cast<std::int64_t>(rng() % 100000000);
    const auto once = parse_advisory(to_osv_json(a));
    CHECK(parse_advisory(to_osv_json(once)) == once);
    CHECK(once.id == a.id);
    CHECK(once.aliases == a.aliases);
    CHECK(once.summary == a.summary);
    CHECK(once.details == a.details);
    CHECK(once.fixed_versions == a.fixed_versions);
    CHECK(once.references == a.references);
    CHECK(once.published == a.published);
  }
}

TEST_CASE("repository url normalisation") {
  CHECK(normalize_repo_url("http://github.com/Owner/Repo.git/") == "https://github.com/Owner/Repo");
  CHECK(normalize_repo_url("git://github.com/spring-projects/spring-security.git") ==
        "https://github.com/spring-projects/spring-security");
  CHECK(normalize_repo_url("https://github.com/o/r/commit/abc") == "https://github.com/o/r");
  CHECK(normalize_repo_url("/tmp/local/repo") == "/tmp/local/repo");
  const auto a = with_repo_url(load_advisory(kFixtures / "advisories/no-references.json"), "https://gitlab.com/x/y.git");
  CHECK(a.repo_url == "https://gitlab.com/x/y");
  CHECK(parse_advisory(to_osv_json(a)).repo_url == "https://gitlab.com/x/y");
}

TEST_CASE("timestamps") {
  CHECK(parse_rfc3339("1970-01-01T00:00:00Z") == 0);
  CHECK(parse_rfc3339("2022-03-16T18:07:52.123Z") == parse_rfc3339("2022-03-16T18:07:52Z"));
  CHECK(parse_rfc3339("2022-03-16T20:07:52+02:00") == parse_rfc3339("2022-03-16T18:07:52Z"));
  CHECK_FALSE(parse_rfc3339("2022-03-16").has_value());
  CHECK(format_rfc3339(*parse_rfc3339("2021-12-31T23:59:59Z")) == "2021-12-31T23:59:59Z");
}

TEST_CASE("CWE to OWASP class") {
  const auto map = CweOwaspMap::load(default_data_dir() / "cwe_owasp.tsv");
  CHECK(map.lookup("CWE-79") == OwaspClass::A03);
  CHECK(map.lookup("CWE-918") == OwaspClass::A10);
  CHECK(map.lookup("CWE-99999") == OwaspClass::OTHER);
  CHECK_FALSE(map.contains("CWE-99999"));

  Advisory a;
  CHECK(owasp_class_of(a, map) == OwaspClass::OTHER);
  a.cwe_ids = {"CWE-22"};
  CHECK(owasp_class_of(a, map) == OwaspClass::A01);
  // Two CWEs: the first decides, checked against a direct lookup.
  const auto b = parse_advisory(R"({"id":"GHSA-aaaa-bbbb-cccc","database_specific":{"cwe_ids":["CWE-502","CWE-79"]}})");
  CHECK(b.multi_cwe);
  CHECK(owasp_class_of(b, map) == map.lookup("CWE-502"));
  // Total: every entry of the loaded table round-trips, misses fall back.
  for (const auto& [cwe, cls] : map.entries()) {
    Advisory c;
    c.cwe_ids = {cwe};
    CHECK(owasp_class_of(c, map) == cls);
  }

  const auto small = CweOwaspMap::parse("# comment\n\nCWE-1\tA03\nCWE-2\tOTHER\n");
  CHECK(small.size() == 2);
  CHECK(small.lookup("CWE-1") == OwaspClass::A03);
  CHECK(code_of([] { CweOwaspMap::parse("CWE-1\tA99\n"); }) == Errc::malformed_document);
}

TEST_CASE("OWASP codes") {
  for (auto c : kAllOwaspClasses) CHECK(parse_owasp_code(owasp_code(c)) == c);
  CHECK_FALSE(trained_index(OwaspClass::A06).has_value());
  CHECK(trained_index(OwaspClass::OTHER) == kTrainedClassCount - 1);
}
