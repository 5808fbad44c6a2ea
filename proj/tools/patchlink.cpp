// Command-line front end.

#include <signal.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "patchlink/dataset.hpp"
#include "patchlink/error.hpp"
#include "patchlink/evaluator.hpp"
#include "patchlink/hashing.hpp"
#include "patchlink/pipeline.hpp"
#include "patchlink/source_resolver.hpp"
#include "patchlink/triage_service.hpp"

namespace fs = std::filesystem;
using namespace patchlink;
using json = nlohmann::json;

namespace {

int exit_code_for(Errc c) {
  switch (c) {
    case Errc::not_found:
    case Errc::ambiguous_match:
    case Errc::fixed_tag_missing:
    case Errc::no_prior_tag:
    case Errc::empty_window: return 2;
    case Errc::registry_unreachable:
    case Errc::repo_access: return 3;
    default: return 1;
  }
}

fs::path reference_model_path() { return default_data_dir() / "reference_model.txt"; }

std::vector<RankModel> load_models(const std::vector<std::string>& paths) {
  std::vector<RankModel> models;
  for (const auto& p : paths) models.push_back(load_model(p));
  if (models.empty()) models.push_back(load_model(reference_model_path()));
  return models;
}

std::vector<std::string> split_ids(const Corpus& corpus, const std::string& which, int fold) {
  if (which == "holdout") return corpus.split.holdout;
  if (which == "all") {
    std::set<std::string> ids;
    for (const auto& r : corpus.rows) ids.insert(r.advisory_id);
    return {ids.begin(), ids.end()};
  }
  if (which == "test" && fold < 0) fold = 0;
  if (fold < 0) {
    // every non-holdout advisory
    std::vector<std::string> ids;
    for (const auto& f : corpus.split.folds) ids.insert(ids.end(), f.begin(), f.end());
    return ids;
  }
  const CorpusSplit view = corpus.split.view(static_cast<std::size_t>(fold));
  return which == "test" ? view.test : view.train;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::invalid_argument, "cannot write " + path.string());
}

int cmd_resolve(const std::string& ecosystem, const std::string& package, bool live, const std::string& fixtures) {
  const RegistryQuery q = make_query(ecosystem, package);
  std::string url;
  if (live) {
    LiveFetcher net;
    ThrottledFetcher throttled(net);
    url = resolve_source_url(q, throttled);
  } else {
    if (fixtures.empty()) throw Error(Errc::invalid_argument, "pass --fixtures <dir> or --live");
    FixtureFetcher fx(fixtures);
    url = resolve_source_url(q, fx);
  }
  std::cout << url << '\n';
  return 0;
}

int cmd_rank(const std::string& advisory_file, const std::string& repo_arg, std::size_t top,
             const std::vector<std::string>& model_paths, const std::string& cache, bool as_json) {
  Advisory adv = load_advisory(advisory_file);
  const std::string repo_url = repo_arg.empty() ? adv.repo_url : repo_arg;
  if (repo_url.empty()) throw Error(Errc::not_found, "advisory has no repository link; pass --repo");
  const GitRepository repo = GitRepository::open(repo_url, cache);
  const ReferenceProviders providers;
  const auto models = load_models(model_paths);
  const auto rankings = rank_advisory(adv, repo, models, providers.view());

  json out = json::array();
  for (const auto& wr : rankings) {
    json w{{"fixed_version", wr.fixed_version}};
    if (!wr.error.empty()) {
      w["error"] = wr.error;
      w["message"] = wr.error_message;
      if (!as_json) std::cout << adv.id << ' ' << wr.fixed_version << ": " << wr.error << '\n';
      out.push_back(w);
      continue;
    }
    w["prior_tag"] = wr.window.prior_tag.raw;
    w["fixed_tag"] = wr.window.fixed_tag.raw;
    w["total"] = wr.window.total;
    json cands = json::array();
    if (!as_json)
      std::cout << adv.id << ' ' << wr.window.prior_tag.raw << ".." << wr.window.fixed_tag.raw << " ("
                << wr.window.total << " commits)\n";
    for (const auto& e : wr.ranked.entries) {
      if (e.rank_position > top) break;
      json f = json::object();
      const auto v = e.features.values();
      for (std::size_t i = 0; i < kFeatureCount; ++i) f[std::string(kFeatureNames[i])] = v[i];
      cands.push_back({{"rank", e.rank_position}, {"sha", e.sha}, {"probability", e.probability}, {"features", f}});
      if (!as_json) std::printf("  %2zu  %s  %.4f\n", e.rank_position, e.sha.c_str(), e.probability);
    }
    w["candidates"] = cands;
    out.push_back(w);
  }
  if (as_json) std::cout << json{{"advisory_id", adv.id}, {"windows", out}}.dump(2) << '\n';
  const bool none = std::all_of(rankings.begin(), rankings.end(), [](const WindowRanking& w) { return !w.error.empty(); });
  if (none && !rankings.empty()) {
    std::cerr << "error (" << rankings.front().error << "): no window could be ranked\n";
    return 2;
  }
  return 0;
}

int cmd_build_dataset(const std::string& advisory_dir, const std::string& out_dir, const std::string& cache,
                      std::uint64_t seed, double holdout, std::size_t folds, std::size_t ratio) {
  const ReferenceProviders providers;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(advisory_dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  fs::create_directories(fs::path(out_dir) / "windows");
  fs::create_directories(fs::path(out_dir) / "advisories");
  std::ofstream skipped(fs::path(out_dir) / "skipped.tsv");
  std::ofstream negatives(fs::path(out_dir) / "negatives.tsv");
  negatives << "repo_url\tvfc_sha\tnegative_sha\n";

  std::vector<AdvisoryWindows> items;
  std::vector<SplitItem> split_items;
  std::map<std::string, std::vector<std::string>> vfcs_by_repo;
  for (const auto& file : files) {
    Advisory adv;
    try {
      adv = load_advisory(file);
    } catch (const Error& e) {
      skipped << file.filename().string() << "\t\t" << errc_name(e.code()) << '\n';
      continue;
    }
    if (adv.repo_url.empty()) {
      skipped << adv.id << "\t\tmissing_source\n";
      continue;
    }
    if (adv.multi_cwe) skipped << adv.id << "\t\tmulti_cwe_flagged\n";
    std::optional<GitRepository> repo;
    try {
      repo.emplace(GitRepository::open(adv.repo_url, cache));
    } catch (const Error& e) {
      skipped << adv.id << "\t\t" << errc_name(e.code()) << '\n';
      continue;
    }
    MinedAdvisory mined = mine_advisory(adv, *repo);
    for (const auto& [fixed, reason] : mined.skipped) skipped << adv.id << '\t' << fixed << '\t' << reason << '\n';
    if (mined.item.windows.empty()) continue;

    std::ofstream wout(fs::path(out_dir) / "windows" / (adv.id + ".ndjson"));
    SplitItem si;
    si.advisory_id = adv.id;
    si.owasp = owasp_class_of(adv, providers.cwe_map);
    si.language = dominant_language(mined.item.windows);
    for (const auto& w : mined.item.windows) {
      write_window_records(wout, w);
      for (const auto& c : w.commits) {
        si.shas.push_back(c.sha);
        if (is_fix_commit(adv, c.sha)) vfcs_by_repo[adv.repo_url].push_back(c.sha);
      }
    }
    write_text(fs::path(out_dir) / "advisories" / (adv.id + ".json"), to_osv_json(adv));
    split_items.push_back(std::move(si));
    items.push_back(std::move(mined.item));
  }

  Corpus corpus;
  corpus.rows = contiguous_sample(items, providers.view());
  if (split_items.size() >= folds) corpus.split = split(split_items, holdout, folds, seed);
  else std::cerr << "warning: only " << split_items.size() << " advisories; no split written\n";
  save_corpus(out_dir, corpus);

  for (auto& [url, vfcs] : vfcs_by_repo) {
    const GitRepository repo = GitRepository::open(url, cache);
    const auto history = repo.history();
    const NegativeSample ns = sample_non_vfcs(history, vfcs, providers.vfc, ratio, seed);
    for (const auto& p : ns.picks) negatives << url << '\t' << p.vfc_sha << '\t' << p.sha << '\n';
    if (ns.insufficient) std::cerr << "warning: " << url << " has too few eligible non-VFC commits\n";
  }
  std::cout << "advisories " << items.size() << ", rows " << corpus.rows.size() << ", holdout "
            << corpus.split.holdout.size() << '\n';
  if (corpus.split.stratum_too_small) std::cout << "note: small strata were merged before stratifying\n";
  return 0;
}

int cmd_train(const std::string& corpus_dir, const std::string& out, int fold, const RankParams& params) {
  const Corpus corpus = load_corpus(corpus_dir);
  const auto ids = split_ids(corpus, "train", fold);
  const FeatureMatrix data = matrix_of(rows_of(corpus.rows, ids));
  TrainLog log;
  const RankModel model = train(data, params, &log);
  save_model(model, out);
  std::cout << "rows " << data.size() << ", trees " << model.trees.size() << ", final log-loss "
            << (log.loss.empty() ? 0.0 : log.loss.back()) << '\n';
  if (log.degenerate) std::cout << "note: single-label training data; constant model written\n";
  return 0;
}

int cmd_evaluate(const std::string& corpus_dir, const std::vector<std::string>& model_paths, const std::string& which,
                 int fold, const std::string& report_path, const std::string& metrics_path) {
  const Corpus corpus = load_corpus(corpus_dir);
  const auto models = load_models(model_paths);
  const auto rows = rows_of(corpus.rows, split_ids(corpus, which, fold));
  const EvalReport report = evaluate(models, rows);
  const std::string metrics = report_to_metrics_text(report);
  if (!report_path.empty()) write_text(report_path, report_to_json(report) + "\n");
  if (!metrics_path.empty()) write_text(metrics_path, metrics);
  std::cout << metrics;
  return 0;
}

int cmd_importance(const std::string& corpus_dir, const std::string& model_path, const std::string& which, int fold,
                   std::uint64_t seed) {
  const Corpus corpus = load_corpus(corpus_dir);
  const RankModel model = load_model(model_path);
  const FeatureMatrix data = matrix_of(rows_of(corpus.rows, split_ids(corpus, which, fold)));
  const FeatureArray imp = permutation_importance(model, data, seed);
  for (std::size_t i = 0; i < kFeatureCount; ++i) std::printf("%-18s %.6f\n", std::string(kFeatureNames[i]).c_str(), imp[i]);
  return 0;
}

int cmd_audit_sample(const std::string& corpus_dir, std::size_t n, std::uint64_t seed) {
  const Corpus corpus = load_corpus(corpus_dir);
  std::vector<const LabeledRow*> negatives;
  for (const auto& r : corpus.rows)
    if (r.label == 0) negatives.push_back(&r);
  std::mt19937_64 rng(seed);
  seeded_shuffle(std::span<const LabeledRow*>(negatives), rng);
  std::cout << "advisory_id\tfixed_version\tsha\n";
  for (std::size_t i = 0; i < negatives.size() && i < n; ++i)
    std::cout << negatives[i]->advisory_id << '\t' << negatives[i]->fixed_version << '\t' << negatives[i]->sha << '\n';
  return 0;
}

int cmd_serve(const std::string& host, int port, ServiceConfig cfg) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // inherited by every thread started below

  TriageService service(std::move(cfg));
  httplib::Server server;
  service.mount(server);
  std::thread stopper([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    std::cerr << "error: cannot listen on " << host << ':' << port << '\n';
    pthread_kill(stopper.native_handle(), SIGTERM);
    stopper.join();
    return 1;
  }
  std::cout << "listening on " << host << ':' << bound << std::endl;
  server.listen_after_bind();
  pthread_kill(stopper.native_handle(), SIGTERM);
  stopper.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Match security advisories to the commits that fix them"};
  app.require_subcommand(1);

  std::string ecosystem, package, fixtures;
  bool live = false;
  auto* resolve = app.add_subcommand("resolve", "Find the source repository of a registry package");
  resolve->add_option("ecosystem", ecosystem, "PyPI, npm, Maven, ...")->required();
  resolve->add_option("package", package, "package name (Maven: groupId:artifactId)")->required();
  resolve->add_flag("--live", live, "query the registries over the network");
  resolve->add_option("--fixtures", fixtures, "directory of recorded registry responses");

  std::string advisory_file, repo, cache = ".patchlink-cache/repos";
  std::size_t top = 5;
  std::vector<std::string> models;
  bool as_json = false;
  auto* rank = app.add_subcommand("rank", "Rank the commits of an advisory's fix windows");
  rank->add_option("advisory", advisory_file, "OSV advisory file")->required()->check(CLI::ExistingFile);
  rank->add_option("--repo", repo, "repository path or URL (defaults to the advisory's link)");
  rank->add_option("--top", top, "candidates to print per window");
  rank->add_option("--model", models, "model file; repeat to average several (default: the shipped reference model)");
  rank->add_option("--cache", cache, "clone cache directory");
  rank->add_flag("--json", as_json, "print JSON");

  std::string advisory_dir, out_dir;
  std::uint64_t seed = 7;
  double holdout = 0.10;
  std::size_t folds = 5, ratio = 5;
  auto* build = app.add_subcommand("build-dataset", "Mine windows and write a labelled corpus");
  build->add_option("advisory-dir", advisory_dir)->required()->check(CLI::ExistingDirectory);
  build->add_option("--out", out_dir)->required();
  build->add_option("--cache", cache);
  build->add_option("--seed", seed);
  build->add_option("--holdout", holdout);
  build->add_option("--folds", folds);
  build->add_option("--ratio", ratio, "non-VFCs sampled per VFC");

  std::string corpus_dir, out_model;
  int fold = -1;
  RankParams params;
  auto* trn = app.add_subcommand("train", "Train the ranking model");
  trn->add_option("corpus", corpus_dir)->required()->check(CLI::ExistingDirectory);
  trn->add_option("--out", out_model)->required();
  trn->add_option("--fold", fold, "hold this fold out (default: train on every non-holdout advisory)");
  trn->add_option("--learning-rate", params.learning_rate);
  trn->add_option("--max-depth", params.max_depth);
  trn->add_option("--rounds", params.rounds);
  trn->add_option("--lambda", params.l2_lambda);
  trn->add_option("--min-child-weight", params.min_child_weight);
  trn->add_option("--seed", params.seed);

  std::string which = "holdout", report_path, metrics_path;
  std::vector<std::string> eval_models;
  auto* eval = app.add_subcommand("evaluate", "Score a model on a corpus split");
  eval->add_option("corpus", corpus_dir)->required()->check(CLI::ExistingDirectory);
  eval->add_option("models", eval_models, "model files; probabilities are averaged")->required();
  eval->add_option("--split", which, "holdout, test, train or all")
      ->check(CLI::IsMember({"holdout", "test", "train", "all"}));
  eval->add_option("--fold", fold);
  eval->add_option("--report", report_path, "write the JSON report here");
  eval->add_option("--metrics", metrics_path, "write the flat metrics file here");

  std::string host = "127.0.0.1", store, static_dir, data_dir;
  int port = 8080;
  std::size_t workers = 2, compact_every = 1000;
  auto* serve = app.add_subcommand("serve", "Run the triage HTTP service");
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--store", store, "store file (default $PATCHLINK_STORE)");
  serve->add_option("--model", models, "model file; repeat to average several");
  serve->add_option("--static", static_dir, "directory of UI assets");
  serve->add_option("--workers", workers);
  serve->add_option("--cache", cache);
  serve->add_option("--data", data_dir, "scorer data directory");
  serve->add_option("--compact-every", compact_every);

  std::string model_path;
  auto* imp = app.add_subcommand("importance", "Permutation importance of each feature");
  imp->add_option("corpus", corpus_dir)->required()->check(CLI::ExistingDirectory);
  imp->add_option("model", model_path)->required()->check(CLI::ExistingFile);
  imp->add_option("--split", which)->check(CLI::IsMember({"holdout", "test", "train", "all"}));
  imp->add_option("--fold", fold);
  imp->add_option("--seed", seed);

  std::size_t sample_n = 100;
  auto* audit = app.add_subcommand("audit-sample", "Seeded sample of non-VFC rows for manual audit");
  audit->add_option("corpus", corpus_dir)->required()->check(CLI::ExistingDirectory);
  audit->add_option("--n", sample_n);
  audit->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*resolve) return cmd_resolve(ecosystem, package, live, fixtures);
    if (*rank) return cmd_rank(advisory_file, repo, top, models, cache, as_json);
    if (*build) return cmd_build_dataset(advisory_dir, out_dir, cache, seed, holdout, folds, ratio);
    if (*trn) return cmd_train(corpus_dir, out_model, fold, params);
    if (*eval) return cmd_evaluate(corpus_dir, eval_models, which, fold, report_path, metrics_path);
    if (*imp) return cmd_importance(corpus_dir, model_path, which, fold, seed);
    if (*audit) return cmd_audit_sample(corpus_dir, sample_n, seed);
    if (*serve) {
      ServiceConfig cfg;
      if (store.empty()) {
        const char* env = std::getenv("PATCHLINK_STORE");
        store = env && *env ? env : "patchlink-store.jsonl";
      }
      cfg.store_path = store;
      for (const auto& m : models) cfg.models.emplace_back(m);
      if (cfg.models.empty() && fs::exists(reference_model_path())) cfg.models.push_back(reference_model_path());
      if (!static_dir.empty()) cfg.static_dir = static_dir;
      if (!data_dir.empty()) cfg.data_dir = data_dir;
      cfg.workers = workers;
      cfg.repo_cache = cache;
      cfg.compact_every = compact_every;
      return cmd_serve(host, port, std::move(cfg));
    }
  } catch (const Error& e) {
    std::cerr << "error (" << errc_name(e.code()) << "): " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
