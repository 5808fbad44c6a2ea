#include "patchlink/features.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "patchlink/error.hpp"

namespace patchlink {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool id_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool contains_id(const std::string& haystack, const std::string& id) {
  if (id.empty()) return false;
  std::size_t pos = 0;
  while ((pos = haystack.find(id, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !id_char(haystack[pos - 1]);
    const std::size_t end = pos + id.size();
    const bool right_ok = end >= haystack.size() || !id_char(haystack[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

}  // namespace

IdFlags detect_ids(std::string_view message, const Advisory& advisory) {
  const std::string text = lower(message);
  IdFlags flags;
  auto check = [&](const std::string& raw) {
    const std::string id = lower(raw);
    if (id.starts_with("cve-") && !flags.cve && contains_id(text, id)) flags.cve = 1;
    if (id.starts_with("ghsa-") && !flags.ghsa && contains_id(text, id)) flags.ghsa = 1;
  };
  check(advisory.id);
  for (const auto& alias : advisory.aliases) check(alias);
  return flags;
}

double commit_rank_norm(std::size_t rank, std::size_t total) {
  if (rank < 1 || rank > total)
    throw Error(Errc::invalid_rank, "commit rank " + std::to_string(rank) + " outside 1.." + std::to_string(total));
  return static_cast<double>(rank) / static_cast<double>(total);
}

FeatureAssembler::FeatureAssembler(const Advisory& advisory, const Providers& providers)
    : advisory_(&advisory), providers_(providers) {
  if (!providers_.tokenizer || !providers_.vfc || !providers_.type || !providers_.embedder || !providers_.cwe_map)
    throw Error(Errc::invalid_argument, "feature assembly needs every provider");
  advisory_class_ = owasp_class_of(advisory, *providers_.cwe_map);
  advisory_embedding_ = providers_.embedder->embed(advisory_text(advisory));
}

AssembledCommit FeatureAssembler::assemble(const CommitRecord& commit, const CommitWindow& window) const {
  AssembledCommit out;
  FeatureVector& fv = out.features;

  const auto chunks = encode_commit(commit, *providers_.tokenizer, providers_.max_len);
  std::set<Language> langs;
  if (chunks.empty()) {
    out.no_scoreable_files = true;
    fv.vfc_probability = 0.0;
    fv.type_top1_match = 0.0;
    fv.type_top5_match = 0.0;
  } else {
    std::vector<FilePrediction> preds;
    std::vector<TypeDistribution> dists;
    preds.reserve(chunks.size());
    dists.reserve(chunks.size());
    for (const auto& chunk : chunks) {
      preds.push_back({chunk.file_index, providers_.vfc->score(chunk)});
      dists.push_back(providers_.type->score(chunk));
      langs.insert(commit.files[chunk.file_index].language);
    }
    fv.vfc_probability = aggregate_commit(preds);
    const TypeMatch match = type_match_features(advisory_class_, dists);
    fv.type_top1_match = match.top1;
    fv.type_top5_match = match.top5;
    out.predicted_type = match.predicted;
  }
  out.languages.assign(langs.begin(), langs.end());

  const auto sim = cosine(advisory_embedding_, providers_.embedder->embed(commit.message));
  fv.similarity = sim.value;
  out.zero_similarity_vector = sim.zero_vector;

  const IdFlags ids = detect_ids(commit.message, *advisory_);
  fv.cve_in_message = ids.cve;
  fv.ghsa_in_message = ids.ghsa;
  fv.commit_rank_norm = commit_rank_norm(commit.rank, window.total);
  return out;
}

AssembledCommit assemble(const Advisory& advisory, const CommitRecord& commit, const CommitWindow& window,
                         const Providers& providers) {
  return FeatureAssembler(advisory, providers).assemble(commit, window);
}

}  // namespace patchlink
