// P2 encoder layout, P3 loss gradients, P4 aggregation oracles.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "acceptance.hpp"
#include "patchlink/chunk_encoder.hpp"
#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"
#include "patchlink/type_scorer.hpp"
#include "patchlink/vfc_scorer.hpp"

namespace patchlink::acceptance {
namespace {

std::string random_text(std::mt19937_64& rng, std::size_t max_words) {
  static const std::vector<std::string> kWords = {
      "fix", "xss", "in", "parser", "Escape", "user_input", "+", "-", "(", ")", "{", "}", ";", "return",
      "if", "x", "=", "0x1f", "sanitize", "@@", "CVE-2021-1234", "path", "/", "traversal", "\n", "  ", "a1_b2"};
  const std::size_t n = static_cast<std::size_t>(rng() % (max_words + 1));
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s += kWords[rng() % kWords.size()];
    if (rng() % 3 == 0) s += ' ';
  }
  return s;
}

Outcome run_p2() {
  Outcome out;
  HashingTokenizer tok;
  std::mt19937_64 rng(2);
  std::size_t truncated = 0, message_cut = 0;
  for (int i = 0; i < 1000; ++i) {
    // Mix short pairs, pairs near the limit and pairs far over it.
    const std::size_t scale = i % 3 == 0 ? 40 : (i % 3 == 1 ? 400 : 1500);
    const std::string message = random_text(rng, i % 10 == 0 ? 1200 : scale / 4);
    FileDiff diff;
    diff.path = "src/a.py";
    diff.language = Language::Python;
    diff.patch_text = random_text(rng, scale);
    const std::size_t max_len = i % 5 == 0 ? 8 + rng() % 120 : kDefaultMaxLen;

    const auto enc = encode_file_chunk(message, diff, tok, max_len);
    const auto msg = tok.encode(message);
    const auto code = tok.encode(diff.patch_text);
    const std::size_t n = enc.input_ids.size();
    const std::size_t m = enc.message_tokens, d = enc.diff_tokens;
    const std::string at = cat("pair ", i, ": ");

    out.expect(n <= max_len && n <= kDefaultMaxLen, at + "too long");
    out.expect(enc.attention_mask.size() == n && enc.token_type_ids.size() == n, at + "array lengths differ");
    out.expect(n == m + d + 3, at + "segment counts do not add up");
    if (n != m + d + 3 || n < 3) continue;
    out.expect(enc.input_ids[0] == tok.cls_id(), at + "CLS not first");
    out.expect(enc.input_ids[m + 1] == tok.sep_id(), at + "SEP misplaced");
    out.expect(enc.input_ids[n - 1] == tok.eos_id(), at + "EOS not last");
    for (std::size_t k = 0; k < n; ++k) {
      const bool special = k == 0 || k == m + 1 || k == n - 1;
      if (!special && enc.input_ids[k] < HashingTokenizer::kReserved) {
        out.fail(at + "special id inside a segment");
        break;
      }
    }
    out.expect(std::all_of(enc.attention_mask.begin(), enc.attention_mask.end(), [](auto v) { return v == 1; }),
               at + "mask not all ones");
    bool types_ok = true;
    for (std::size_t k = 0; k < n; ++k) types_ok = types_ok && enc.token_type_ids[k] == (k <= m + 1 ? 0 : 1);
    out.expect(types_ok, at + "segment ids do not partition at SEP");

    // Kept tokens are prefixes of the full encodings.
    out.expect(std::equal(enc.input_ids.begin() + 1, enc.input_ids.begin() + 1 + static_cast<std::ptrdiff_t>(m),
                          msg.begin()) && m <= msg.size(),
               at + "message segment is not a prefix");
    out.expect(std::equal(enc.input_ids.begin() + static_cast<std::ptrdiff_t>(m + 2),
                          enc.input_ids.begin() + static_cast<std::ptrdiff_t>(m + 2 + d), code.begin()) &&
                   d <= code.size(),
               at + "diff segment is not a prefix");

    // Truncation order: diff tokens go first, then message tokens.
    const std::size_t cap = max_len - 3;
    const std::size_t want_m = std::min(msg.size(), cap);
    const std::size_t want_d = std::min(code.size(), cap - want_m);
    out.expect(m == want_m && d == want_d, at + cat("kept ", m, "+", d, " expected ", want_m, "+", want_d));
    out.expect(enc.truncated == (msg.size() + code.size() > cap), at + "truncated flag");
    truncated += enc.truncated;
    message_cut += m < msg.size();
  }
  out.expect(truncated > 100 && message_cut > 10, "generator did not exercise truncation");
  out.detail = cat("1000 pairs, ", truncated, " truncated, ", message_cut, " with the message cut");
  return out;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Outcome run_p3() {
  Outcome out;
  std::mt19937_64 rng(3);
  double worst_bce = 0.0, worst_ce = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double x = 0.01 + 0.98 * unit_uniform(rng);
    const int y = static_cast<int>(rng() % 2);
    const double h = 1e-6;
    const double fd = (bce_loss({x + h, y}) - bce_loss({x - h, y})) / (2 * h);
    const double e = rel_err(bce_gradient({x, y}), fd);
    worst_bce = std::max(worst_bce, e);
    out.expect(e <= 1e-5, cat("bce point ", i, " x=", x, " y=", y, " rel err ", e));
  }
  for (int i = 0; i < 200; ++i) {
    TrainedLogits z;
    for (auto& v : z) v = -3.0 + 6.0 * unit_uniform(rng);
    const OwaspClass y = kTrainedClasses[rng() % kTrainedClassCount];
    ClassWeights w;
    for (auto& v : w.w) v = 0.2 + 2.8 * unit_uniform(rng);
    const auto grad = weighted_ce_gradient(z, y, w);
    for (std::size_t c = 0; c < kTrainedClassCount; ++c) {
      const double h = 1e-5;
      TrainedLogits up = z, down = z;
      up[c] += h;
      down[c] -= h;
      const double fd = (weighted_ce_loss(up, y, w) - weighted_ce_loss(down, y, w)) / (2 * h);
      const double e = rel_err(grad[c], fd);
      worst_ce = std::max(worst_ce, e);
      out.expect(e <= 1e-5, cat("ce point ", i, " logit ", c, " rel err ", e));
    }
  }
  out.detail = cat("200+200 points, worst relative error bce ", worst_bce, ", weighted ce ", worst_ce);
  return out;
}

Outcome run_p4() {
  Outcome out;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    // Mean aggregation.
    std::vector<FilePrediction> preds(1 + rng() % 12);
    for (std::size_t k = 0; k < preds.size(); ++k) preds[k] = {k, unit_uniform(rng)};
    double sum = 0.0;
    for (const auto& p : preds) sum += p.probability;
    const double oracle = sum / static_cast<double>(preds.size());
    out.expect(aggregate_commit(preds) == oracle, cat("mean instance ", i));
    seeded_shuffle(std::span<FilePrediction>(preds), rng);
    out.expect(std::abs(aggregate_commit(preds) - oracle) <= 1e-12, cat("mean instance ", i, " not permutation-invariant"));

    // Argmax aggregation; coarse probabilities make ties common.
    std::vector<TypeDistribution> dists(1 + rng() % 5);
    for (auto& d : dists) {
      for (auto c : kTrainedClasses) d.probs[index_of(c)] = static_cast<double>(rng() % 11) / 10.0;
    }
    OwaspClass best_cls = OwaspClass::OTHER;
    double best = -1.0;
    for (auto c : kAllOwaspClasses)  // class order outermost: lowest code wins ties
      for (const auto& d : dists)
        if (d[c] > best) {
          best = d[c];
          best_cls = c;
        }
    const auto v = aggregate_type(dists);
    out.expect(v.cls == best_cls && v.probability == best,
               cat("argmax instance ", i, ": got ", owasp_code(v.cls), " ", v.probability, " expected ",
                   owasp_code(best_cls), " ", best));

    // Top-5 membership from the max-pooled distribution by a sorting oracle.
    const OwaspClass adv = kTrainedClasses[rng() % kTrainedClassCount];
    std::vector<std::pair<double, int>> pooled;
    for (auto c : kAllOwaspClasses) {
      double m = 0.0;
      for (const auto& d : dists) m = std::max(m, d[c]);
      pooled.push_back({-m, static_cast<int>(index_of(c))});
    }
    std::sort(pooled.begin(), pooled.end());
    bool in_top5 = false;
    for (int k = 0; k < 5; ++k) in_top5 = in_top5 || pooled[static_cast<std::size_t>(k)].second == static_cast<int>(index_of(adv));
    const auto tm = type_match_features(adv, dists);
    out.expect(tm.top1 == (best_cls == adv ? 1 : 0) && tm.top5 == (in_top5 ? 1 : 0), cat("type match instance ", i));
  }
  out.expect(classify_vfc(0.5) == 1, "0.5 must classify as 1");
  out.expect(classify_vfc(std::nextafter(0.5, 0.0)) == 0, "just below 0.5 must classify as 0");
  out.expect(classify_vfc(0.4999) == 0 && classify_vfc(1.0) == 1 && classify_vfc(0.0) == 0, "threshold examples");
  for (int i = 0; i < 1000; ++i) {
    const double p = unit_uniform(rng);
    out.expect(classify_vfc(p) == (p >= 0.5 ? 1 : 0), cat("threshold at ", p));
  }
  out.detail = "1000 mean, argmax and top-5 instances; boundary 0.5 -> 1";
  return out;
}

const Register p2("P2", "encoder layout", 10.0, run_p2);
const Register p3("P3", "loss gradients", 5.0, run_p3);
const Register p4("P4", "aggregation oracles", 5.0, run_p4);

}  // namespace
}  // namespace patchlink::acceptance
