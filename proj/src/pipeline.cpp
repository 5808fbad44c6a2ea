#include "patchlink/pipeline.hpp"

#include <cstdlib>

#include "patchlink/error.hpp"

#ifndef PATCHLINK_DATA_DIR
#define PATCHLINK_DATA_DIR "data"
#endif

namespace patchlink {

namespace {

bool window_error(Errc c) {
  return c == Errc::fixed_tag_missing || c == Errc::no_prior_tag || c == Errc::empty_window;
}

}  // namespace

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("PATCHLINK_DATA"); env && *env) return env;
  return PATCHLINK_DATA_DIR;
}

ReferenceProviders::ReferenceProviders(const std::filesystem::path& data_dir)
    : tokenizer(),
      cwe_map(CweOwaspMap::load(data_dir / "cwe_owasp.tsv")),
      vfc(Lexicon::load(data_dir / "vfc_lexicon.tsv"), tokenizer),
      type(KeywordTypeProvider::load(data_dir / "type_lexicon.tsv", tokenizer)),
      embedder() {}

Providers ReferenceProviders::view() const {
  Providers p;
  p.tokenizer = &tokenizer;
  p.vfc = &vfc;
  p.type = &type;
  p.embedder = &embedder;
  p.cwe_map = &cwe_map;
  return p;
}

std::vector<WindowRanking> rank_advisory(const Advisory& advisory, const GitRepository& repo,
                                         std::span<const RankModel> models, const Providers& providers) {
  const FeatureAssembler assembler(advisory, providers);
  std::vector<WindowRanking> out;
  for (const auto& fixed : advisory.fixed_versions) {
    WindowRanking wr;
    wr.fixed_version = fixed;
    try {
      wr.window = mine_window(repo, fixed);
    } catch (const Error& e) {
      if (!window_error(e.code())) throw;
      wr.error = std::string(errc_name(e.code()));
      wr.error_message = e.what();
      out.push_back(std::move(wr));
      continue;
    }
    std::vector<RankedEntry> entries;
    entries.reserve(wr.window.commits.size());
    for (const auto& commit : wr.window.commits) {
      const AssembledCommit a = assembler.assemble(commit, wr.window);
      entries.push_back({commit.sha, predict_mean(models, a.features.values()), a.features, 0});
    }
    wr.ranked = rank_scored(advisory.id, std::move(entries));
    out.push_back(std::move(wr));
  }
  return out;
}

MinedAdvisory mine_advisory(const Advisory& advisory, const GitRepository& repo) {
  MinedAdvisory m;
  m.item.advisory = advisory;
  for (const auto& fixed : advisory.fixed_versions) {
    try {
      m.item.windows.push_back(mine_window(repo, fixed));
      m.item.fixed_versions.push_back(fixed);
    } catch (const Error& e) {
      if (!window_error(e.code())) throw;
      m.skipped.emplace_back(fixed, std::string(errc_name(e.code())));
    }
  }
  return m;
}

}  // namespace patchlink
