#include "patchlink/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

#include <json.hpp>

#include "patchlink/error.hpp"

namespace patchlink {

namespace {

using json = nlohmann::json;

double ratio(std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }

MetricBlock metric_block(std::span<const double> scores, std::span<const int> labels) {
  MetricBlock b;
  b.rows = labels.size();
  b.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (labels.empty()) return b;
  std::vector<int> preds;
  preds.reserve(scores.size());
  for (double s : scores) preds.push_back(classify_vfc(s));
  b.vfc = classification_metrics(preds, labels);
  if (b.positives > 0 && b.positives < b.rows) {
    b.has_auc = true;
    b.auc = roc_auc(scores, labels);
  }
  return b;
}

json scores_json(const ClassScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
}

json metrics_json(const ClassificationMetrics& m, bool owasp_names) {
  json per = json::object();
  for (const auto& [cls, s] : m.per_class)
    per[owasp_names ? std::string(owasp_code(static_cast<OwaspClass>(cls))) : std::to_string(cls)] = scores_json(s);
  return {{"accuracy", m.accuracy},
          {"macro_precision", m.macro_precision},
          {"macro_recall", m.macro_recall},
          {"macro_f1", m.macro_f1},
          {"weighted_precision", m.weighted_precision},
          {"weighted_recall", m.weighted_recall},
          {"weighted_f1", m.weighted_f1},
          {"skipped_zero_support", m.skipped_zero_support},
          {"per_class", per}};
}

json block_json(const MetricBlock& b) {
  json j{{"rows", b.rows}, {"positives", b.positives}, {"vfc", metrics_json(b.vfc, false)}};
  j["auc"] = b.has_auc ? json(b.auc) : json(nullptr);
  return j;
}

void emit(std::vector<std::string>& lines, const std::string& name, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  lines.push_back(name + " " + buf);
}

void emit_block(std::vector<std::string>& lines, const std::string& prefix, const MetricBlock& b) {
  emit(lines, prefix + "accuracy", b.vfc.accuracy);
  emit(lines, prefix + "macro_precision", b.vfc.macro_precision);
  emit(lines, prefix + "macro_recall", b.vfc.macro_recall);
  emit(lines, prefix + "macro_f1", b.vfc.macro_f1);
  emit(lines, prefix + "weighted_f1", b.vfc.weighted_f1);
  if (b.has_auc) emit(lines, prefix + "auc", b.auc);
}

}  // namespace

std::size_t RankedTruth::first_hit() const {
  for (const auto& e : result.entries)
    if (std::find(true_shas.begin(), true_shas.end(), e.sha) != true_shas.end()) return e.rank_position;
  return 0;
}

TopNRecall topn_recall(std::span<const RankedTruth> results, std::size_t n) {
  if (results.empty()) throw Error(Errc::empty_results, "no ranked results to score");
  TopNRecall r;
  r.total = results.size();
  for (const auto& res : results) {
    if (res.true_shas.empty())
      throw Error(Errc::invalid_argument, "result for " + res.result.advisory_id + " has no true sha");
    const std::size_t pos = res.first_hit();
    if (pos == 0) continue;
    ++r.found;
    if (pos <= n) ++r.hits;
  }
  r.all = ratio(r.hits, r.total);
  r.found_only = ratio(r.hits, r.found);
  return r;
}

ClassificationMetrics classification_metrics(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty()) throw Error(Errc::empty_input, "no predictions");
  if (preds.size() != labels.size()) throw Error(Errc::invalid_argument, "predictions and labels differ in length");

  std::set<int> classes(labels.begin(), labels.end());
  classes.insert(preds.begin(), preds.end());
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<int, Counts> counts;
  for (int c : classes) counts[c];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) {
      ++correct;
      ++counts[labels[i]].tp;
    } else {
      ++counts[preds[i]].fp;
      ++counts[labels[i]].fn;
    }
  }

  ClassificationMetrics m;
  m.accuracy = ratio(correct, preds.size());
  std::size_t scored = 0;
  for (const auto& [cls, c] : counts) {
    ClassScores s;
    s.support = c.tp + c.fn;
    s.precision = ratio(c.tp, c.tp + c.fp);
    s.recall = ratio(c.tp, s.support);
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    m.per_class[cls] = s;
    if (s.support == 0) {
      m.skipped_zero_support = true;
      continue;
    }
    ++scored;
    m.macro_precision += s.precision;
    m.macro_recall += s.recall;
    m.macro_f1 += s.f1;
    const double w = static_cast<double>(s.support);
    m.weighted_precision += w * s.precision;
    m.weighted_recall += w * s.recall;
    m.weighted_f1 += w * s.f1;
  }
  const double k = static_cast<double>(scored);
  const double total = static_cast<double>(labels.size());
  m.macro_precision /= k;
  m.macro_recall /= k;
  m.macro_f1 /= k;
  m.weighted_precision /= total;
  m.weighted_recall /= total;
  m.weighted_f1 /= total;
  return m;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(Errc::invalid_argument, "scores and labels differ in length");
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::single_class, "AUC needs both labels");

  // Sum of average ranks of the positives.
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

std::vector<std::vector<double>> ConfusionMatrix::normalized() const {
  std::vector<std::vector<double>> out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double total = static_cast<double>(row_sum(i));
    out[i].resize(counts[i].size(), 0.0);
    if (total == 0.0) continue;
    for (std::size_t j = 0; j < counts[i].size(); ++j) out[i][j] = static_cast<double>(counts[i][j]) / total;
  }
  return out;
}

std::size_t ConfusionMatrix::row_sum(std::size_t i) const {
  return std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0});
}

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                 std::span<const int> classes) {
  if (preds.size() != labels.size()) throw Error(Errc::invalid_argument, "predictions and labels differ in length");
  ConfusionMatrix m;
  m.classes.assign(classes.begin(), classes.end());
  m.counts.assign(classes.size(), std::vector<std::size_t>(classes.size(), 0));
  auto index = [&](int c) {
    const auto it = std::find(classes.begin(), classes.end(), c);
    if (it == classes.end()) throw Error(Errc::invalid_argument, "class " + std::to_string(c) + " not declared");
    return static_cast<std::size_t>(it - classes.begin());
  };
  for (std::size_t i = 0; i < preds.size(); ++i) ++m.counts[index(labels[i])][index(preds[i])];
  return m;
}

std::vector<RankedTruth> rank_windows(std::span<const RankModel> models, std::span<const LabeledRow> rows) {
  // Rows of one window are contiguous in a corpus, but do not rely on it.
  std::map<std::pair<std::string, std::string>, std::vector<const LabeledRow*>> windows;
  for (const auto& r : rows) windows[{r.advisory_id, r.fixed_version}].push_back(&r);
  std::vector<RankedTruth> out;
  for (const auto& [key, members] : windows) {
    RankedTruth t;
    std::vector<RankedEntry> entries;
    for (const LabeledRow* r : members) {
      entries.push_back({r->sha, predict_mean(models, r->features.values()), r->features, 0});
      if (r->label == 1) t.true_shas.push_back(r->sha);
    }
    if (t.true_shas.empty()) continue;
    t.result = rank_scored(key.first, std::move(entries));
    out.push_back(std::move(t));
  }
  return out;
}

EvalReport evaluate(std::span<const RankModel> models, std::span<const LabeledRow> rows) {
  if (rows.empty()) throw Error(Errc::empty_input, "no rows to evaluate");
  EvalReport report;

  const auto ranked = rank_windows(models, rows);
  report.units = ranked.size();
  if (!ranked.empty())
    for (std::size_t n : kTopN) report.topn[n] = topn_recall(ranked, n);

  std::vector<double> scores;
  std::vector<int> labels;
  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> by_language;
  for (const auto& r : rows) {
    const double p = predict_mean(models, r.features.values());
    scores.push_back(p);
    labels.push_back(r.label);
    for (Language l : r.languages) {
      auto& [s, y] = by_language[std::string(language_name(l))];
      s.push_back(p);
      y.push_back(r.label);
    }
  }
  report.overall = metric_block(scores, labels);
  for (const auto& [lang, sy] : by_language) report.per_language[lang] = metric_block(sy.first, sy.second);

  std::vector<int> type_true, type_pred, all_classes;
  for (OwaspClass c : kAllOwaspClasses) all_classes.push_back(static_cast<int>(c));
  for (const auto& r : rows) {
    if (r.label != 1) continue;
    type_true.push_back(static_cast<int>(r.advisory_type));
    type_pred.push_back(static_cast<int>(r.predicted_type));
  }
  report.type_confusion = confusion_matrix(type_pred, type_true, all_classes);
  if (!type_true.empty()) report.type_metrics = classification_metrics(type_pred, type_true);
  return report;
}

std::string report_to_json(const EvalReport& report) {
  json topn = json::object();
  for (const auto& [n, r] : report.topn)
    topn["top" + std::to_string(n)] = {{"recall", r.all}, {"recall_found_only", r.found_only}, {"hits", r.hits},
                                       {"total", r.total}, {"found", r.found}};
  json langs = json::object();
  for (const auto& [lang, b] : report.per_language) langs[lang] = block_json(b);

  json classes = json::array();
  for (int c : report.type_confusion.classes) classes.push_back(owasp_code(static_cast<OwaspClass>(c)));
  json doc{{"units", report.units},
           {"topn_recall", topn},
           {"vfc_identification", block_json(report.overall)},
           {"per_language", langs},
           {"vfc_type",
            {{"classes", classes},
             {"confusion", report.type_confusion.counts},
             {"confusion_normalized", report.type_confusion.normalized()},
             {"metrics", metrics_json(report.type_metrics, true)}}}};
  return doc.dump(2);
}

std::string report_to_metrics_text(const EvalReport& report) {
  std::vector<std::string> lines;
  for (const auto& [n, r] : report.topn) {
    emit(lines, "topn.top" + std::to_string(n), r.all);
    emit(lines, "topn.top" + std::to_string(n) + "_found_only", r.found_only);
  }
  emit_block(lines, "vfc.", report.overall);
  for (const auto& [lang, b] : report.per_language) emit_block(lines, "language." + lang + ".", b);
  emit(lines, "type.accuracy", report.type_metrics.accuracy);
  emit(lines, "type.macro_f1", report.type_metrics.macro_f1);
  emit(lines, "type.weighted_f1", report.type_metrics.weighted_f1);
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

}  // namespace patchlink
