#include "patchlink/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"

namespace patchlink {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw Error(Errc::malformed_document, "bad number '" + std::string(s) + "' in feature file");
  return v;
}

std::vector<std::string> split_on(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

std::string stratum_key(const SplitItem& item) {
  return std::string(owasp_code(item.owasp)) + "|" + std::string(language_name(item.language));
}

}  // namespace

bool is_fix_commit(const Advisory& advisory, std::string_view sha) {
  for (const auto& fix : advisory.fix_commits) {
    if (std::min(fix.size(), sha.size()) < 7) continue;
    if (fix.size() <= sha.size() ? sha.starts_with(fix) : std::string_view(fix).starts_with(sha)) return true;
  }
  return false;
}

std::vector<LabeledRow> contiguous_sample(std::span<const AdvisoryWindows> items, const Providers& providers) {
  std::vector<LabeledRow> rows;
  for (const auto& item : items) {
    const FeatureAssembler assembler(item.advisory, providers);
    for (std::size_t w = 0; w < item.windows.size(); ++w) {
      const CommitWindow& window = item.windows[w];
      const std::string& fixed = w < item.fixed_versions.size() ? item.fixed_versions[w] : window.fixed_tag.raw;
      for (const auto& commit : window.commits) {
        const AssembledCommit a = assembler.assemble(commit, window);
        LabeledRow row;
        row.advisory_id = item.advisory.id;
        row.fixed_version = fixed;
        row.sha = commit.sha;
        row.features = a.features;
        row.label = is_fix_commit(item.advisory, commit.sha) ? 1 : 0;
        row.advisory_type = assembler.advisory_class();
        row.predicted_type = a.predicted_type;
        row.languages = a.languages;
        row.multi_cwe = item.advisory.multi_cwe;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

NegativeSample sample_non_vfcs(std::span<const CommitRecord> history, std::span<const std::string> vfc_shas,
                               const KeywordVfcProvider& filter, std::size_t ratio, std::uint64_t seed) {
  const std::set<std::string> vfcs(vfc_shas.begin(), vfc_shas.end());
  std::vector<std::string> pool;
  std::set<std::string> seen;
  for (const auto& c : history) {
    if (vfcs.contains(c.sha) || seen.contains(c.sha)) continue;
    if (filter.keyword_hits(c.message) != 0) continue;
    const bool target = std::any_of(c.files.begin(), c.files.end(),
                                    [](const FileDiff& f) { return f.language != Language::Other; });
    if (!target) continue;
    seen.insert(c.sha);
    pool.push_back(c.sha);
  }
  std::sort(pool.begin(), pool.end());  // history order must not leak into the draw
  std::mt19937_64 rng(seed);
  seeded_shuffle(std::span<std::string>(pool), rng);

  NegativeSample out;
  std::size_t next = 0;
  for (const auto& vfc : vfc_shas) {
    for (std::size_t k = 0; k < ratio; ++k) {
      if (next >= pool.size()) {
        out.insufficient = true;
        break;
      }
      out.picks.push_back({vfc, pool[next++]});
    }
  }
  return out;
}

CorpusSplit SplitResult::view(std::size_t test_fold) const {
  if (test_fold >= folds.size()) throw Error(Errc::invalid_argument, "fold index out of range");
  CorpusSplit s;
  s.holdout = holdout;
  s.test = folds[test_fold];
  for (std::size_t f = 0; f < folds.size(); ++f)
    if (f != test_fold) s.train.insert(s.train.end(), folds[f].begin(), folds[f].end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

SplitResult split(std::span<const SplitItem> items, double holdout_fraction, std::size_t folds, std::uint64_t seed) {
  const std::size_t n = items.size();
  if (folds == 0 || n < folds)
    throw Error(Errc::invalid_argument,
                "need at least " + std::to_string(folds) + " advisories to split, got " + std::to_string(n));
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw Error(Errc::invalid_argument, "holdout fraction must lie in [0, 1)");

  // Canonical item order so the caller's ordering does not matter.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return items[a].advisory_id < items[b].advisory_id; });

  UnionFind uf(n);
  std::unordered_map<std::string, std::size_t> owner;
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (const auto& sha : items[order[pos]].shas) {
      const auto [it, inserted] = owner.emplace(sha, pos);
      if (!inserted) uf.unite(it->second, pos);
    }
  }
  // Groups of positions, keyed by their smallest position.
  std::map<std::size_t, std::vector<std::size_t>> group_map;
  for (std::size_t pos = 0; pos < n; ++pos) group_map[uf.find(pos)].push_back(pos);

  std::map<std::string, std::size_t> stratum_size;
  for (const auto& item : items) ++stratum_size[stratum_key(item)];

  SplitResult result;
  const std::string kMixed = "~mixed";
  std::map<std::string, std::vector<std::vector<std::size_t>>> strata;
  for (auto& [root, members] : group_map) {
    std::string key = stratum_key(items[order[root]]);
    if (stratum_size[key] < folds) {
      if (std::find(result.merged_strata.begin(), result.merged_strata.end(), key) == result.merged_strata.end())
        result.merged_strata.push_back(key);
      key = kMixed;
    }
    strata[key].push_back(members);
  }
  std::sort(result.merged_strata.begin(), result.merged_strata.end());
  result.stratum_too_small = !result.merged_strata.empty();

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> ordered;  // groups in stratified order
  for (auto& [key, groups] : strata) {
    seeded_shuffle(std::span<std::vector<std::size_t>>(groups), rng);
    for (auto& g : groups) ordered.push_back(std::move(g));
  }

  // Systematic holdout sample over the flattened advisory order.
  std::vector<std::size_t> group_at;
  for (std::size_t g = 0; g < ordered.size(); ++g)
    for (std::size_t k = 0; k < ordered[g].size(); ++k) group_at.push_back(g);
  const auto target = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  std::vector<char> in_holdout(ordered.size(), 0);
  std::size_t held = 0;
  if (target > 0) {
    const double u = unit_uniform(rng);
    for (std::size_t i = 0; i < target; ++i) {
      const auto pos = static_cast<std::size_t>(std::floor((static_cast<double>(i) + u) * static_cast<double>(n) /
                                                           static_cast<double>(target)));
      const std::size_t g = group_at[std::min(pos, n - 1)];
      if (in_holdout[g] || held + ordered[g].size() > target) continue;
      in_holdout[g] = 1;
      held += ordered[g].size();
    }
    for (std::size_t g = 0; g < ordered.size() && held < target; ++g) {
      if (in_holdout[g] || held + ordered[g].size() > target) continue;
      in_holdout[g] = 1;
      held += ordered[g].size();
    }
  }

  result.folds.assign(folds, {});
  for (std::size_t g = 0; g < ordered.size(); ++g) {
    std::vector<std::string> ids;
    for (std::size_t pos : ordered[g]) ids.push_back(items[order[pos]].advisory_id);
    if (in_holdout[g]) {
      result.holdout.insert(result.holdout.end(), ids.begin(), ids.end());
      continue;
    }
    const auto smallest = std::min_element(result.folds.begin(), result.folds.end(),
                                           [](const auto& a, const auto& b) { return a.size() < b.size(); });
    smallest->insert(smallest->end(), ids.begin(), ids.end());
  }
  std::sort(result.holdout.begin(), result.holdout.end());
  for (auto& f : result.folds) std::sort(f.begin(), f.end());
  return result;
}

Language dominant_language(std::span<const CommitWindow> windows) {
  std::array<std::size_t, kLanguageCount> counts{};
  for (const auto& w : windows)
    for (const auto& c : w.commits)
      for (const auto& f : c.files)
        if (f.language != Language::Other) ++counts[static_cast<std::size_t>(f.language)];
  std::size_t best = static_cast<std::size_t>(Language::Other);
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < kLanguageCount; ++i) {
    if (counts[i] > best_count) {
      best = i;
      best_count = counts[i];
    }
  }
  return static_cast<Language>(best);
}

std::vector<std::string> overlapping_shas(std::span<const SplitItem> items,
                                          std::span<const std::vector<std::string>> groups) {
  std::unordered_map<std::string, const SplitItem*> by_id;
  for (const auto& item : items) by_id[item.advisory_id] = &item;
  std::unordered_map<std::string, std::size_t> group_of_sha;
  std::set<std::string> overlap;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& id : groups[g]) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) continue;
      for (const auto& sha : it->second->shas) {
        const auto [pos, inserted] = group_of_sha.emplace(sha, g);
        if (!inserted && pos->second != g) overlap.insert(sha);
      }
    }
  }
  return {overlap.begin(), overlap.end()};
}

void write_feature_csv(std::ostream& out, std::span<const LabeledRow> rows) {
  out << "advisory_id,fixed_version,sha";
  for (auto name : kFeatureNames) out << ',' << name;
  out << ",label,advisory_type,predicted_type,languages\n";
  for (const auto& r : rows) {
    out << r.advisory_id << ',' << r.fixed_version << ',' << r.sha;
    for (double v : r.features.values()) out << ',' << format_double(v);
    out << ',' << r.label << ',' << owasp_code(r.advisory_type) << ',' << owasp_code(r.predicted_type) << ',';
    for (std::size_t i = 0; i < r.languages.size(); ++i) out << (i ? "|" : "") << language_name(r.languages[i]);
    out << '\n';
  }
}

std::vector<LabeledRow> read_feature_csv(std::istream& in) {
  std::vector<LabeledRow> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  if (!line.starts_with("advisory_id,fixed_version,sha,"))
    throw Error(Errc::malformed_document, "feature file lacks the expected header");
  constexpr std::size_t kColumns = 3 + kFeatureCount + 4;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_on(line, ',');
    if (cols.size() != kColumns)
      throw Error(Errc::malformed_document, "feature file line " + std::to_string(lineno) + " has " +
                                                std::to_string(cols.size()) + " columns");
    LabeledRow r;
    r.advisory_id = cols[0];
    r.fixed_version = cols[1];
    r.sha = cols[2];
    FeatureArray v{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = parse_double(cols[3 + i]);
    r.features = FeatureVector::from_values(v);
    const std::string& label = cols[3 + kFeatureCount];
    if (label != "0" && label != "1") throw Error(Errc::malformed_document, "label must be 0 or 1");
    r.label = label == "1";
    const auto at = parse_owasp_code(cols[4 + kFeatureCount]);
    const auto pt = parse_owasp_code(cols[5 + kFeatureCount]);
    if (!at || !pt) throw Error(Errc::malformed_document, "unknown OWASP class in feature file");
    r.advisory_type = *at;
    r.predicted_type = *pt;
    if (!cols[6 + kFeatureCount].empty())
      for (const auto& name : split_on(cols[6 + kFeatureCount], '|')) r.languages.push_back(parse_language(name));
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_labels_tsv(std::ostream& out, std::span<const LabeledRow> rows) {
  for (const auto& r : rows) out << r.advisory_id << '\t' << r.sha << '\t' << r.label << '\n';
}

std::string split_to_json(const SplitResult& s) {
  nlohmann::json doc{{"holdout", s.holdout},
                     {"folds", s.folds},
                     {"stratum_too_small", s.stratum_too_small},
                     {"merged_strata", s.merged_strata}};
  return doc.dump(2);
}

SplitResult split_from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    SplitResult s;
    s.holdout = doc.at("holdout").get<std::vector<std::string>>();
    s.folds = doc.at("folds").get<std::vector<std::vector<std::string>>>();
    s.stratum_too_small = doc.value("stratum_too_small", false);
    s.merged_strata = doc.value("merged_strata", std::vector<std::string>{});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_document, std::string("bad split file: ") + e.what());
  }
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  std::ofstream features(dir / "features.csv", std::ios::binary | std::ios::trunc);
  write_feature_csv(features, corpus.rows);
  std::ofstream labels(dir / "labels.tsv", std::ios::binary | std::ios::trunc);
  write_labels_tsv(labels, corpus.rows);
  std::ofstream split_file(dir / "split.json", std::ios::binary | std::ios::trunc);
  split_file << split_to_json(corpus.split) << '\n';
  if (!features || !labels || !split_file) throw Error(Errc::invalid_argument, "cannot write corpus to " + dir.string());
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream features(dir / "features.csv", std::ios::binary);
  if (!features) throw Error(Errc::not_found, "no features.csv in " + dir.string());
  Corpus c;
  c.rows = read_feature_csv(features);
  std::ifstream split_file(dir / "split.json", std::ios::binary);
  if (!split_file) throw Error(Errc::not_found, "no split.json in " + dir.string());
  std::stringstream ss;
  ss << split_file.rdbuf();
  c.split = split_from_json(ss.str());
  return c;
}

std::vector<LabeledRow> rows_of(std::span<const LabeledRow> rows, std::span<const std::string> advisory_ids) {
  const std::set<std::string_view> wanted(advisory_ids.begin(), advisory_ids.end());
  std::vector<LabeledRow> out;
  for (const auto& r : rows)
    if (wanted.contains(r.advisory_id)) out.push_back(r);
  return out;
}

FeatureMatrix matrix_of(std::span<const LabeledRow> rows) {
  FeatureMatrix m;
  for (const auto& r : rows) m.add(r.features.values(), r.label);
  return m;
}

}  // namespace patchlink
