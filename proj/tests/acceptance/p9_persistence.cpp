// P9: model file round trip, and a triage store that survives SIGKILL.

#include <signal.h>
#include <sys/wait.h>

#include <cstring>
#include <fstream>
#include <future>
#include <map>
#include <random>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "acceptance.hpp"
#include "child.hpp"
#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"
#include "patchlink/ranker.hpp"
#include "synth.hpp"

namespace patchlink::acceptance {
namespace {

using nlohmann::json;
using namespace std::chrono_literals;

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void check_model_round_trip(Outcome& out, const std::filesystem::path& dir) {
  std::mt19937_64 rng(9);
  FeatureMatrix data;
  for (int i = 0; i < 600; ++i) {
    FeatureArray x;
    for (auto& v : x) v = unit_uniform(rng);
    data.add(x, unit_uniform(rng) < x[0] * x[3] + 0.1 ? 1 : 0);
  }
  RankParams params;
  params.rounds = 120;
  params.learning_rate = 0.05;
  const RankModel model = train(data, params);
  const auto path = dir / "model.txt";
  save_model(model, path);
  const RankModel loaded = load_model(path);
  out.expect(loaded == model, "loaded model differs from the saved one");
  for (int i = 0; i < 2000; ++i) {
    FeatureArray x;
    for (auto& v : x) v = unit_uniform(rng) * 1.2 - 0.1;
    if (!same_bits(model.predict(x), loaded.predict(x))) {
      out.fail("prediction bits differ after reload");
      break;
    }
  }
  out.expect(model_file_contents(loaded) == model_file_contents(model), "re-serialised file differs");

  std::string text = model_file_contents(model);
  std::string flipped = text;
  flipped[text.size() / 3] = flipped[text.size() / 3] == '1' ? '2' : '1';
  try {
    parse_model_file(flipped);
    out.fail("a corrupted body was accepted");
  } catch (const Error& e) {
    out.expect(e.code() == Errc::corrupt_model, "corruption reported as " + std::string(errc_name(e.code())));
  }
  // Another format version with a valid checksum.
  std::string body = text.substr(0, text.find('\n'));
  const std::string key = "\"format_version\":" + std::to_string(kModelFormatVersion);
  const auto pos = body.find(key);
  out.expect(pos != std::string::npos, "format_version missing from the model file");
  if (pos != std::string::npos) {
    body.replace(pos, key.size(), "\"format_version\":" + std::to_string(kModelFormatVersion + 1));
    try {
      parse_model_file(body + "\nchecksum " + hex64(fnv1a64(body)) + "\n");
      out.fail("a future format version was accepted");
    } catch (const Error& e) {
      out.expect(e.code() == Errc::version_mismatch, "version reported as " + std::string(errc_name(e.code())));
    }
  }
}

class Server {
 public:
  Server(const std::vector<std::string>& args) : child_(args) {
    const auto line = child_.read_line(30s);
    if (!line || line->rfind("listening on ", 0) != 0) throw std::runtime_error("server did not start");
    port_ = std::stoi(line->substr(line->rfind(':') + 1));
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30s);
    return c;
  }
  testing::Child& child() { return child_; }

 private:
  testing::Child child_;
  int port_ = 0;
};

// (advisory, fixed version, sha) -> decision name
using Key = std::tuple<std::string, std::string, std::string>;
using Expected = std::map<Key, std::string>;

json get_json(httplib::Client& c, const std::string& path, int* status = nullptr) {
  auto res = c.Get(path);
  if (!res) throw std::runtime_error("GET " + path + " failed");
  if (status) *status = res->status;
  return json::parse(res->body);
}

Expected server_state(httplib::Client& c, const std::vector<std::string>& ids) {
  Expected s;
  for (const auto& id : ids) {
    const auto j = get_json(c, "/advisories/" + id + "/candidates?top_k=1000");
    for (const auto& w : j.at("windows"))
      for (const auto& cand : w.at("candidates"))
        s[{id, w.at("fixed_version"), cand.at("sha")}] = cand.at("decision");
  }
  return s;
}

void apply(Expected& e, const json& record) {
  e[{record.at("advisory_id"), record.at("fixed_version"), record.at("sha")}] = record.at("decision");
}

std::set<std::pair<std::string, std::string>> confirmed_of(const Expected& e) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& [k, d] : e)
    if (d == "confirmed") out.insert({std::get<0>(k), std::get<2>(k)});
  return out;
}

std::set<std::pair<std::string, std::string>> exported(httplib::Client& c) {
  std::set<std::pair<std::string, std::string>> out;
  const json doc = get_json(c, "/backfill/export");
  for (const auto& e : doc.at("entries"))
    for (const auto& sha : e.at("confirmed_shas"))
      out.insert({e.at("advisory_id").get<std::string>(), sha.get<std::string>()});
  return out;
}

void check_restart(Outcome& out, httplib::Client& c, const std::vector<std::string>& ids, const Expected& expected,
                   const std::string& when) {
  const auto got = server_state(c, ids);
  std::size_t mismatches = 0;
  for (const auto& [k, d] : expected) {
    const auto it = got.find(k);
    const std::string have = it == got.end() ? "<missing>" : it->second;
    if (have != d && ++mismatches <= 5)
      out.fail(cat(when, ": ", std::get<0>(k), " ", std::get<2>(k).substr(0, 8), " is ", have, ", acknowledged ", d));
  }
  out.expect(confirmed_of(got) == confirmed_of(expected), when + ": confirmed set differs");
  const auto exp = exported(c);
  out.expect(exp == confirmed_of(expected), cat(when, ": export (", exp.size(), " links) differs from ",
                                                confirmed_of(expected).size(), " acknowledged confirms"));
}

Outcome run() {
  Outcome out;
  synth::TempDir tmp("patchlink-p9");
  check_model_round_trip(out, tmp.path());

  synth::CorpusParams params;
  params.advisories = 12;
  params.per_repo = 4;
  params.seed = 99;
  const auto corpus = synth::generate_corpus(params, tmp.path() / "corpus");
  const auto model_path = tmp.path() / "rank-model.txt";
  save_model(constant_model(0.0), model_path);
  const auto store = tmp.path() / "store.jsonl";
  const std::vector<std::string> args = {testing::cli_path(),     "serve",       "--port",        "0",
                                         "--store",               store.string(), "--model",       model_path.string(),
                                         "--cache",               (tmp.path() / "cache").string(), "--workers", "1",
                                         "--compact-every",       "16"};

  std::vector<std::string> ids;
  std::vector<std::tuple<std::string, std::string, std::string>> candidates;  // id, fixed version, sha
  Expected expected;
  {
    Server s(args);
    auto c = s.client();
    for (const auto& sa : corpus.advisories) {
      std::ifstream in(sa.file);
      const std::string doc((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      auto res = c.Post("/advisories", doc, "application/json");
      out.expect(res && res->status == 201, "advisory not accepted");
      ids.push_back(sa.advisory.id);
    }
    for (const auto& id : ids) {
      int status = 0;
      for (int tries = 0; tries < 600; ++tries) {
        get_json(c, "/advisories/" + id + "/candidates", &status);
        if (status != 202) break;
        std::this_thread::sleep_for(50ms);
      }
      out.expect(status == 200, cat(id, ": candidates status ", status));
    }
    expected = server_state(c, ids);
    for (const auto& [k, d] : expected) candidates.emplace_back(std::get<0>(k), std::get<1>(k), std::get<2>(k));
    s.child().signal(SIGKILL);
    s.child().wait();
  }
  if (!out.pass) return out;

  std::mt19937_64 rng(1234);
  auto body_for = [&](const std::string& fixed) {
    static const char* kDecisions[] = {"confirmed", "confirmed", "rejected", "rejected", "pending"};
    return json{{"decision", kDecisions[rng() % 5]}, {"reviewer", cat("analyst", rng() % 3)},
                {"note", cat("n", rng() % 4)}, {"fixed_version", fixed}, {"override", rng() % 2 == 0}};
  };
  std::size_t sent = 0, acked = 0, conflicts = 0, restarts = 0;
  auto session = [&](Server& s, std::size_t count) {
    auto c = s.client();
    for (std::size_t i = 0; i < count; ++i, ++sent) {
      const auto& [id, fixed, sha] = candidates[rng() % candidates.size()];
      auto res = c.Post("/advisories/" + id + "/candidates/" + sha + "/decision", body_for(fixed).dump(),
                        "application/json");
      if (!res) {
        out.fail("decision request failed");
        continue;
      }
      if (res->status == 409) {
        ++conflicts;
        continue;
      }
      out.expect(res->status == 200, cat("decision status ", res->status));
      const auto j = json::parse(res->body);
      apply(expected, j.at("record"));
      for (const auto& r : j.at("side_effects")) apply(expected, r);
      ++acked;
    }
  };

  for (int phase = 0; phase < 2; ++phase) {
    Server s(args);
    if (phase == 0) {
      auto c = s.client();
      check_restart(out, c, ids, expected, "after ingest restart");
    }
    session(s, 50);
    s.child().signal(SIGKILL);  // no shutdown path: only what reached the log survives
    s.child().wait();
    ++restarts;
    Server again(args);
    auto c = again.client();
    check_restart(out, c, ids, expected, cat("after kill ", restarts));
    if (phase == 1) {
      again.child().signal(SIGTERM);
      const int status = again.child().wait();
      out.expect(WIFEXITED(status) && WEXITSTATUS(status) == 0, "graceful shutdown did not exit 0");
    } else {
      again.child().signal(SIGKILL);
      again.child().wait();
    }
  }
  out.detail = cat("model round trip bit-exact; ", sent, " decisions (", acked, " acknowledged, ", conflicts,
                   " conflicts) across ", restarts, " SIGKILL restarts, ", confirmed_of(expected).size(),
                   " confirmed links intact");
  return out;
}

const Register reg("P9", "persistence", 120.0, run);

}  // namespace
}  // namespace patchlink::acceptance
