// Writes a synthetic corpus: git repositories under <out>/repos and OSV
// advisories under <out>/advisories, ready for `patchlink build-dataset`.

#include <iostream>

#include <CLI11.hpp>

#include "synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic advisory corpus"};
  std::string out;
  patchlink::synth::CorpusParams params;
  app.add_option("--out", out)->required();
  app.add_option("--advisories", params.advisories);
  app.add_option("--per-repo", params.per_repo);
  app.add_option("--backport", params.backport_fraction);
  app.add_option("--seed", params.seed);
  CLI11_PARSE(app, argc, argv);

  const auto corpus = patchlink::synth::generate_corpus(params, out);
  std::cout << corpus.advisories.size() << " advisories in " << corpus.repos.size() << " repositories\n";
  return 0;
}
