#include "patchlink/triage_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "patchlink/error.hpp"

namespace patchlink {

using json = nlohmann::json;

namespace {

constexpr std::string_view kDecisionNames[] = {"pending", "confirmed", "rejected", "not_in_window"};

void write_all(int fd, std::string_view data, const std::filesystem::path& file) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::invalid_argument, "cannot write store " + file.string() + ": " + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void sync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

TriageRecord record_from_json(const json& j) {
  TriageRecord r;
  r.advisory_id = j.at("advisory_id").get<std::string>();
  r.fixed_version = j.value("fixed_version", "");
  r.sha = j.value("sha", "");
  const auto d = parse_decision(j.at("decision").get<std::string>());
  if (!d) throw Error(Errc::malformed_document, "unknown decision in store");
  r.decision = *d;
  r.reviewer = j.value("reviewer", "");
  r.decided_at = j.value("decided_at", std::int64_t{0});
  r.note = j.value("note", "");
  return r;
}

StoredCandidate candidate_from_json(const json& j, const std::string& advisory_id, const std::string& fixed) {
  StoredCandidate c;
  c.sha = j.at("sha").get<std::string>();
  c.probability = j.at("probability").get<double>();
  c.rank_position = j.at("rank_position").get<std::size_t>();
  FeatureArray v{};
  const json& f = j.at("features");
  for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = f.at(std::string(kFeatureNames[i])).get<double>();
  c.features = FeatureVector::from_values(v);
  c.message = j.value("message", "");
  for (const auto& fj : j.value("files", json::array())) {
    FileDiff fd;
    fd.path = fj.at("path").get<std::string>();
    fd.language = parse_language(fj.value("language", "Other"));
    fd.patch_text = fj.value("patch_text", "");
    fd.additions = fj.value("additions", 0u);
    fd.deletions = fj.value("deletions", 0u);
    fd.binary = fj.value("binary", false);
    c.files.push_back(std::move(fd));
  }
  c.record.advisory_id = advisory_id;
  c.record.fixed_version = fixed;
  c.record.sha = c.sha;
  if (j.contains("decision")) {
    const auto d = parse_decision(j["decision"].get<std::string>());
    if (!d) throw Error(Errc::malformed_document, "unknown decision in store");
    c.record.decision = *d;
    c.record.reviewer = j.value("reviewer", "");
    c.record.note = j.value("note", "");
    c.record.decided_at = j.value("decided_at", std::int64_t{0});
  }
  return c;
}

StoredWindow window_from_json(const json& j, const std::string& advisory_id) {
  StoredWindow w;
  w.fixed_version = j.at("fixed_version").get<std::string>();
  w.error = j.value("error", "");
  w.error_message = j.value("error_message", "");
  w.fixed_tag = j.value("fixed_tag", "");
  w.prior_tag = j.value("prior_tag", "");
  w.total = j.value("total", std::size_t{0});
  for (const auto& c : j.value("candidates", json::array()))
    w.candidates.push_back(candidate_from_json(c, advisory_id, w.fixed_version));
  return w;
}

json window_event_json(const StoredWindow& w) { return window_json(w, w.candidates.size()); }

bool same_decision(const TriageRecord& r, const DecisionRequest& req) {
  return r.decision == req.decision && r.reviewer == req.reviewer && r.note == req.note;
}

}  // namespace

std::string_view decision_name(Decision d) noexcept { return kDecisionNames[static_cast<std::size_t>(d)]; }

std::optional<Decision> parse_decision(std::string_view name) noexcept {
  for (std::size_t i = 0; i < std::size(kDecisionNames); ++i)
    if (kDecisionNames[i] == name) return static_cast<Decision>(i);
  return std::nullopt;
}

std::string AdvisoryState::queue_state() const {
  if (advisory_decision && advisory_decision->decision == Decision::not_in_window) return "not_in_window";
  bool any = false;
  for (const auto& w : windows) {
    if (w.candidates.empty()) continue;
    any = true;
    const bool confirmed = std::any_of(w.candidates.begin(), w.candidates.end(),
                                       [](const StoredCandidate& c) { return c.record.decision == Decision::confirmed; });
    if (!confirmed) return "pending";
  }
  return any ? "reviewed" : "pending";
}

std::vector<std::string> AdvisoryState::confirmed_shas() const {
  std::vector<std::string> out;
  for (const auto& w : windows)
    for (const auto& c : w.candidates)
      if (c.record.decision == Decision::confirmed && std::find(out.begin(), out.end(), c.sha) == out.end())
        out.push_back(c.sha);
  return out;
}

json record_json(const TriageRecord& r) {
  return {{"advisory_id", r.advisory_id}, {"fixed_version", r.fixed_version}, {"sha", r.sha},
          {"decision", decision_name(r.decision)}, {"reviewer", r.reviewer}, {"decided_at", r.decided_at},
          {"note", r.note}};
}

json candidate_json(const StoredCandidate& c) {
  json features = json::object();
  const auto v = c.features.values();
  for (std::size_t i = 0; i < kFeatureCount; ++i) features[std::string(kFeatureNames[i])] = v[i];
  json files = json::array();
  for (const auto& f : c.files)
    files.push_back({{"path", f.path}, {"language", language_name(f.language)}, {"patch_text", f.patch_text},
                     {"additions", f.additions}, {"deletions", f.deletions}, {"binary", f.binary}});
  return {{"sha", c.sha},
          {"short_sha", c.sha.substr(0, 7)},
          {"probability", c.probability},
          {"rank_position", c.rank_position},
          {"features", features},
          {"message", c.message},
          {"files", files},
          {"decision", decision_name(c.record.decision)},
          {"reviewer", c.record.reviewer},
          {"note", c.record.note},
          {"decided_at", c.record.decided_at}};
}

json window_json(const StoredWindow& w, std::size_t top_k) {
  json cands = json::array();
  for (std::size_t i = 0; i < w.candidates.size() && i < top_k; ++i) cands.push_back(candidate_json(w.candidates[i]));
  json j{{"fixed_version", w.fixed_version}, {"fixed_tag", w.fixed_tag}, {"prior_tag", w.prior_tag},
         {"total", w.total}, {"candidates", cands}};
  if (!w.error.empty()) {
    j["error"] = w.error;
    j["error_message"] = w.error_message;
  }
  return j;
}

TriageStore::TriageStore(std::filesystem::path file, std::size_t compact_every)
    : file_(std::move(file)), compact_every_(std::max<std::size_t>(compact_every, 1)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  replay();
  compact();
}

TriageStore::~TriageStore() {
  if (fd_ >= 0) ::close(fd_);
}

void TriageStore::replay() {
  std::ifstream in(file_, std::ios::binary);
  if (!in) return;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  std::size_t pos = 0;
  std::size_t lineno = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    const bool last = nl == std::string::npos || nl + 1 >= data.size();
    const std::string line = data.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    ++lineno;
    pos = nl == std::string::npos ? data.size() : nl + 1;
    if (line.empty()) continue;
    json event;
    try {
      event = json::parse(line);
    } catch (const json::parse_error&) {
      if (last) break;  // torn tail from an interrupted append
      throw Error(Errc::malformed_document, "store " + file_.string() + " is corrupt at line " + std::to_string(lineno));
    }
    try {
      apply(event);
    } catch (const json::exception& e) {
      throw Error(Errc::malformed_document,
                  "store " + file_.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void TriageStore::open_for_append() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = ::open(file_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(Errc::invalid_argument, "cannot open store " + file_.string() + ": " + std::strerror(errno));
}

std::vector<json> TriageStore::snapshot_events() const {
  std::vector<json> events;
  for (const auto& a : advisories_) {
    events.push_back({{"op", "advisory"}, {"at", a.added_at}, {"osv", json::parse(to_osv_json(a.advisory))}});
    if (a.ranked) {
      json windows = json::array();
      for (const auto& w : a.windows) windows.push_back(window_event_json(w));
      events.push_back({{"op", "ranking"}, {"advisory_id", a.advisory.id}, {"at", a.ranked_at}, {"windows", windows}});
    }
    if (a.advisory_decision)
      events.push_back({{"op", "advisory_decision"}, {"record", record_json(*a.advisory_decision)}});
  }
  return events;
}

void TriageStore::compact() {
  std::lock_guard wlock(writer_mu_);
  std::string body;
  {
    std::shared_lock rlock(state_mu_);
    for (const auto& e : snapshot_events()) body += e.dump() + "\n";
  }
  const std::filesystem::path tmp = file_.string() + ".compact";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(Errc::invalid_argument, "cannot write " + tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, body, tmp);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::fsync(fd);
  ::close(fd);
  std::filesystem::rename(tmp, file_);
  sync_dir(file_.parent_path());
  open_for_append();
  appends_ = 0;
}

std::size_t TriageStore::appends_since_compaction() const {
  std::lock_guard wlock(writer_mu_);
  return appends_;
}

void TriageStore::append_locked(const json& event) {
  write_all(fd_, event.dump() + "\n", file_);
  if (::fdatasync(fd_) != 0)
    throw Error(Errc::invalid_argument, "cannot sync store " + file_.string() + ": " + std::strerror(errno));
  ++appends_;
}

void TriageStore::apply(const json& event) {
  const std::string op = event.at("op").get<std::string>();
  auto find = [&](const std::string& id) -> AdvisoryState* {
    for (auto& a : advisories_)
      if (a.advisory.id == id) return &a;
    return nullptr;
  };
  if (op == "advisory") {
    AdvisoryState s;
    s.advisory = parse_advisory(event.at("osv").dump());
    s.added_at = event.value("at", std::int64_t{0});
    if (!find(s.advisory.id)) advisories_.push_back(std::move(s));
  } else if (op == "ranking") {
    AdvisoryState* a = find(event.at("advisory_id").get<std::string>());
    if (!a) throw Error(Errc::malformed_document, "ranking for an unknown advisory");
    a->windows.clear();
    for (const auto& w : event.at("windows")) a->windows.push_back(window_from_json(w, a->advisory.id));
    a->ranked = true;
    a->ranked_at = event.value("at", std::int64_t{0});
  } else if (op == "decisions") {
    for (const auto& rj : event.at("records")) {
      const TriageRecord r = record_from_json(rj);
      AdvisoryState* a = find(r.advisory_id);
      if (!a) throw Error(Errc::malformed_document, "decision for an unknown advisory");
      for (auto& w : a->windows) {
        if (w.fixed_version != r.fixed_version) continue;
        for (auto& c : w.candidates)
          if (c.sha == r.sha) c.record = r;
      }
    }
  } else if (op == "advisory_decision") {
    const TriageRecord r = record_from_json(event.at("record"));
    AdvisoryState* a = find(r.advisory_id);
    if (!a) throw Error(Errc::malformed_document, "decision for an unknown advisory");
    if (r.decision == Decision::pending) a->advisory_decision.reset();
    else a->advisory_decision = r;
  } else {
    throw Error(Errc::malformed_document, "unknown store operation '" + op + "'");
  }
}

bool TriageStore::add_advisory(const Advisory& advisory, std::int64_t now) {
  std::unique_lock wlock(writer_mu_);
  for (const auto& a : advisories_)
    if (a.advisory.id == advisory.id) return false;
  const json event{{"op", "advisory"}, {"at", now}, {"osv", json::parse(to_osv_json(advisory))}};
  append_locked(event);
  {
    std::unique_lock lock(state_mu_);
    apply(event);
  }
  const bool due = appends_ >= compact_every_;
  wlock.unlock();
  if (due) compact();
  return true;
}

void TriageStore::put_ranking(const std::string& advisory_id, std::vector<StoredWindow> windows, std::int64_t now) {
  std::unique_lock wlock(writer_mu_);
  const AdvisoryState* current = nullptr;
  for (const auto& a : advisories_)
    if (a.advisory.id == advisory_id) current = &a;
  if (!current) throw Error(Errc::not_found, "no advisory " + advisory_id);

  for (auto& w : windows) {
    for (auto& c : w.candidates) {
      c.record.advisory_id = advisory_id;
      c.record.fixed_version = w.fixed_version;
      c.record.sha = c.sha;
    }
    for (const auto& old : current->windows) {
      if (old.fixed_version != w.fixed_version) continue;
      for (const auto& oc : old.candidates) {
        if (oc.record.decision == Decision::pending) continue;
        auto it = std::find_if(w.candidates.begin(), w.candidates.end(),
                               [&](const StoredCandidate& c) { return c.sha == oc.sha; });
        if (it != w.candidates.end()) it->record = oc.record;
        else w.candidates.push_back(oc);
      }
    }
  }
  json ws = json::array();
  for (const auto& w : windows) ws.push_back(window_event_json(w));
  const json event{{"op", "ranking"}, {"advisory_id", advisory_id}, {"at", now}, {"windows", ws}};
  append_locked(event);
  {
    std::unique_lock lock(state_mu_);
    apply(event);
  }
  const bool due = appends_ >= compact_every_;
  wlock.unlock();
  if (due) compact();
}

DecisionOutcome TriageStore::decide(const std::string& advisory_id, const std::string& sha,
                                    const DecisionRequest& req, std::int64_t now) {
  if (req.decision == Decision::not_in_window)
    throw Error(Errc::invalid_argument, "not_in_window applies to the advisory, not to a candidate");
  std::unique_lock wlock(writer_mu_);
  const AdvisoryState* a = nullptr;
  for (const auto& s : advisories_)
    if (s.advisory.id == advisory_id) a = &s;
  if (!a) throw Error(Errc::not_found, "no advisory " + advisory_id);

  const StoredWindow* window = nullptr;
  const StoredCandidate* cand = nullptr;
  for (const auto& w : a->windows) {
    if (!req.fixed_version.empty() && w.fixed_version != req.fixed_version) continue;
    for (const auto& c : w.candidates) {
      if (c.sha == sha) {
        window = &w;
        cand = &c;
        break;
      }
    }
    if (cand) break;
  }
  if (!cand) throw Error(Errc::unknown_candidate, "commit " + sha + " is not a candidate of " + advisory_id);

  DecisionOutcome out;
  if (same_decision(cand->record, req)) {
    out.record = cand->record;
    out.unchanged = true;
    return out;
  }

  out.record = TriageRecord{advisory_id, window->fixed_version, sha, req.decision, req.reviewer, now, req.note};
  if (req.decision == Decision::confirmed) {
    for (const auto& c : window->candidates) {
      if (c.sha == sha) continue;
      if (c.record.decision == Decision::confirmed) {
        if (!req.override_confirm)
          throw Error(Errc::conflicting_confirm, "commit " + c.sha + " is already confirmed for " + advisory_id + " " +
                                                     window->fixed_version);
        out.side_effects.push_back({advisory_id, window->fixed_version, c.sha, Decision::rejected, req.reviewer, now,
                                    "superseded by " + sha});
      } else if (c.record.decision == Decision::pending) {
        out.side_effects.push_back({advisory_id, window->fixed_version, c.sha, Decision::rejected, req.reviewer, now,
                                    "auto-rejected: " + sha + " confirmed"});
      }
    }
  }
  json records = json::array({record_json(out.record)});
  for (const auto& r : out.side_effects) records.push_back(record_json(r));
  const json event{{"op", "decisions"}, {"records", records}};
  append_locked(event);
  {
    std::unique_lock lock(state_mu_);
    apply(event);
  }
  const bool due = appends_ >= compact_every_;
  wlock.unlock();
  if (due) compact();
  return out;
}

DecisionOutcome TriageStore::decide_advisory(const std::string& advisory_id, const DecisionRequest& req,
                                             std::int64_t now) {
  if (req.decision != Decision::not_in_window && req.decision != Decision::pending)
    throw Error(Errc::invalid_argument, "advisory decisions are not_in_window or pending");
  std::unique_lock wlock(writer_mu_);
  const AdvisoryState* a = nullptr;
  for (const auto& s : advisories_)
    if (s.advisory.id == advisory_id) a = &s;
  if (!a) throw Error(Errc::not_found, "no advisory " + advisory_id);

  DecisionOutcome out;
  const TriageRecord current =
      a->advisory_decision.value_or(TriageRecord{advisory_id, "", "", Decision::pending, "", 0, ""});
  if (same_decision(current, req) || (req.decision == Decision::pending && !a->advisory_decision)) {
    out.record = current;
    out.unchanged = true;
    return out;
  }
  out.record = TriageRecord{advisory_id, "", "", req.decision, req.reviewer, now, req.note};
  const json event{{"op", "advisory_decision"}, {"record", record_json(out.record)}};
  append_locked(event);
  {
    std::unique_lock lock(state_mu_);
    apply(event);
  }
  const bool due = appends_ >= compact_every_;
  wlock.unlock();
  if (due) compact();
  return out;
}

std::optional<AdvisoryState> TriageStore::get(const std::string& advisory_id) const {
  std::shared_lock lock(state_mu_);
  for (const auto& a : advisories_)
    if (a.advisory.id == advisory_id) return a;
  return std::nullopt;
}

std::vector<AdvisoryState> TriageStore::list() const {
  std::shared_lock lock(state_mu_);
  return advisories_;
}

std::vector<TriageRecord> TriageStore::confirmed_records() const {
  std::shared_lock lock(state_mu_);
  std::vector<TriageRecord> out;
  for (const auto& a : advisories_)
    for (const auto& w : a.windows)
      for (const auto& c : w.candidates)
        if (c.record.decision == Decision::confirmed) out.push_back(c.record);
  return out;
}

std::vector<BackfillEntry> TriageStore::export_confirmed(std::int64_t now) const {
  std::shared_lock lock(state_mu_);
  std::vector<BackfillEntry> out;
  for (const auto& a : advisories_) {
    auto shas = a.confirmed_shas();
    if (shas.empty()) continue;
    out.push_back({a.advisory.id, std::move(shas), a.advisory.repo_url, now});
  }
  return out;
}

}  // namespace patchlink
