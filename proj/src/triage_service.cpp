#include "patchlink/triage_service.hpp"

#include <algorithm>
#include <chrono>

#include <httplib.h>
#include <json.hpp>

#include "patchlink/error.hpp"

namespace patchlink {

using json = nlohmann::json;

namespace {

constexpr int kDailySubmissionHint = 10;

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view reason, std::string_view message) {
  reply(res, status, json{{"error", reason}, {"reason", reason}, {"message", message}});
}

int status_for(Errc code) {
  switch (code) {
    case Errc::malformed_document:
    case Errc::missing_id:
    case Errc::invalid_argument: return 400;
    case Errc::not_found:
    case Errc::unknown_candidate: return 404;
    case Errc::conflicting_confirm: return 409;
    case Errc::fixed_tag_missing:
    case Errc::no_prior_tag:
    case Errc::empty_window:
    case Errc::repo_access: return 422;
    default: return 500;
  }
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) {
      reply_error(res, 400, "malformed_document", "request body must be a JSON object");
      return std::nullopt;
    }
    return j;
  } catch (const json::parse_error& e) {
    reply_error(res, 400, "malformed_document", e.what());
    return std::nullopt;
  }
}

std::optional<std::size_t> top_k_param(const httplib::Request& req, httplib::Response& res, std::size_t fallback) {
  if (!req.has_param("top_k")) return fallback;
  try {
    const long v = std::stol(req.get_param_value("top_k"));
    if (v > 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  reply_error(res, 400, "invalid_argument", "top_k must be a positive integer");
  return std::nullopt;
}

json summary_json(const AdvisoryState& a) {
  return {{"id", a.advisory.id},
          {"aliases", a.advisory.aliases},
          {"summary", a.advisory.summary},
          {"published", a.advisory.published_missing ? json(nullptr) : json(format_rfc3339(a.advisory.published))},
          {"state", a.queue_state()},
          {"repo_url", a.advisory.repo_url},
          {"fixed_versions", a.advisory.fixed_versions},
          {"ranked", a.ranked},
          {"confirmed", a.confirmed_shas().size()}};
}

json job_json(const JobStatus& j) {
  json out{{"job_id", j.id}, {"advisory_id", j.advisory_id}, {"state", j.state}, {"top_k", j.top_k}};
  if (!j.error.empty()) {
    out["error"] = j.error;
    out["message"] = j.error_message;
  }
  return out;
}

// Shared preconditions of the rank and candidates endpoints.
bool rankable(const AdvisoryState& a, httplib::Response& res) {
  if (a.advisory.repo_url.empty()) {
    reply_error(res, 422, "missing_source", "advisory has no source repository link");
    return false;
  }
  if (a.advisory.fixed_versions.empty()) {
    reply_error(res, 422, "no_fixed_version", "advisory lists no fixed version");
    return false;
  }
  return true;
}

}  // namespace

TriageService::TriageService(ServiceConfig config) : config_(std::move(config)) {
  store_ = std::make_unique<TriageStore>(config_.store_path, config_.compact_every);
  providers_ = std::make_unique<ReferenceProviders>(config_.data_dir);
  for (const auto& m : config_.models) models_.push_back(load_model(m));
  const std::size_t n = std::max<std::size_t>(config_.workers, 1);
  for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

TriageService::~TriageService() {
  {
    std::lock_guard lock(jobs_mu_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

std::int64_t TriageService::now() const {
  if (config_.clock) return config_.clock();
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string TriageService::submit_rank(const std::string& advisory_id, std::size_t top_k) {
  std::lock_guard lock(jobs_mu_);
  JobStatus j;
  j.id = "job-" + std::to_string(next_job_++);
  j.advisory_id = advisory_id;
  j.state = "queued";
  j.top_k = top_k;
  jobs_[j.id] = j;
  latest_job_[advisory_id] = j.id;
  queue_.push_back(j.id);
  jobs_cv_.notify_one();
  return j.id;
}

std::optional<JobStatus> TriageService::job(const std::string& job_id) const {
  std::lock_guard lock(jobs_mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::optional<JobStatus> TriageService::latest_job_for(const std::string& advisory_id) const {
  std::lock_guard lock(jobs_mu_);
  const auto it = latest_job_.find(advisory_id);
  if (it == latest_job_.end()) return std::nullopt;
  return jobs_.at(it->second);
}

void TriageService::wait_idle() {
  std::unique_lock lock(jobs_mu_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && running_ == 0; });
}

void TriageService::worker_loop() {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(jobs_mu_);
      jobs_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      jobs_[id].state = "running";
      ++running_;
    }
    run_job(id);
    {
      std::lock_guard lock(jobs_mu_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void TriageService::run_job(const std::string& job_id) {
  const JobStatus j = *job(job_id);
  auto finish = [&](std::string state, std::string error = {}, std::string message = {}) {
    std::lock_guard lock(jobs_mu_);
    JobStatus& s = jobs_[job_id];
    s.state = std::move(state);
    s.error = std::move(error);
    s.error_message = std::move(message);
  };
  try {
    const auto state = store_->get(j.advisory_id);
    if (!state) return finish("failed", "not_found", "advisory vanished");
    const Advisory& adv = state->advisory;
    std::optional<GitRepository> repo;
    {
      std::lock_guard lock(clone_mu_);
      repo.emplace(GitRepository::open(adv.repo_url, config_.repo_cache));
    }
    const auto rankings = rank_advisory(adv, *repo, models_, providers_->view());
    std::vector<StoredWindow> windows;
    for (const auto& wr : rankings) {
      StoredWindow w;
      w.fixed_version = wr.fixed_version;
      w.error = wr.error;
      w.error_message = wr.error_message;
      if (wr.error.empty()) {
        w.fixed_tag = wr.window.fixed_tag.raw;
        w.prior_tag = wr.window.prior_tag.raw;
        w.total = wr.window.total;
        for (const auto& e : wr.ranked.entries) {
          if (w.candidates.size() >= j.top_k) break;
          StoredCandidate c;
          c.sha = e.sha;
          c.probability = e.probability;
          c.rank_position = e.rank_position;
          c.features = e.features;
          const auto it = std::find_if(wr.window.commits.begin(), wr.window.commits.end(),
                                       [&](const CommitRecord& cr) { return cr.sha == e.sha; });
          if (it != wr.window.commits.end()) {
            c.message = it->message;
            c.files = it->files;
          }
          w.candidates.push_back(std::move(c));
        }
      }
      windows.push_back(std::move(w));
    }
    store_->put_ranking(j.advisory_id, std::move(windows), now());
    finish("done");
  } catch (const Error& e) {
    finish("failed", std::string(errc_name(e.code())), e.what());
  } catch (const std::exception& e) {
    finish("failed", "internal", e.what());
  }
}

void TriageService::mount(httplib::Server& server) {
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, json{{"ok", true}}); });

  server.Post("/advisories", [this](const httplib::Request& req, httplib::Response& res) {
    Advisory adv;
    try {
      adv = parse_advisory(req.body);
    } catch (const Error& e) {
      return reply_error(res, 400, errc_name(e.code()), e.what());
    }
    if (!store_->add_advisory(adv, now()))
      return reply_error(res, 409, "duplicate", "advisory " + adv.id + " already exists");
    json body{{"id", adv.id}, {"state", "pending"}};
    if (!adv.repo_url.empty() && !adv.fixed_versions.empty() && !models_.empty())
      body["job_id"] = submit_rank(adv.id, config_.default_top_k);
    reply(res, 201, body);
  });

  server.Get("/advisories", [this](const httplib::Request& req, httplib::Response& res) {
    std::string filter;
    if (req.has_param("state")) {
      filter = req.get_param_value("state");
      if (filter != "pending" && filter != "reviewed" && filter != "not_in_window")
        return reply_error(res, 400, "invalid_argument", "state must be pending, reviewed or not_in_window");
    }
    auto all = store_->list();
    std::stable_sort(all.begin(), all.end(), [](const AdvisoryState& a, const AdvisoryState& b) {
      if (a.advisory.published != b.advisory.published) return a.advisory.published < b.advisory.published;
      return a.advisory.id < b.advisory.id;
    });
    json out = json::array();
    for (const auto& a : all)
      if (filter.empty() || a.queue_state() == filter) out.push_back(summary_json(a));
    reply(res, 200, json{{"advisories", out}});
  });

  server.Get(R"(/advisories/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto a = store_->get(req.matches[1]);
    if (!a) return reply_error(res, 404, "not_found", "no advisory " + std::string(req.matches[1]));
    json body = summary_json(*a);
    body["advisory"] = json::parse(to_osv_json(a->advisory));
    if (a->advisory_decision) body["advisory_decision"] = record_json(*a->advisory_decision);
    if (const auto j = latest_job_for(a->advisory.id)) body["job"] = job_json(*j);
    reply(res, 200, body);
  });

  server.Post(R"(/advisories/([^/]+)/rank)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto body = parse_body(req, res);
    if (!body) return;
    const auto a = store_->get(id);
    if (!a) return reply_error(res, 404, "not_found", "no advisory " + id);
    if (!rankable(*a, res)) return;
    if (models_.empty()) return reply_error(res, 503, "no_model", "service was started without a ranking model");
    std::size_t top_k = config_.default_top_k;
    if (body->contains("top_k")) {
      const json& k = (*body)["top_k"];
      if (!k.is_number_integer() || k.get<long>() <= 0)
        return reply_error(res, 400, "invalid_argument", "top_k must be a positive integer");
      top_k = k.get<std::size_t>();
    }
    const std::string job_id = submit_rank(id, top_k);
    reply(res, 202, json{{"job_id", job_id}, {"state", "queued"}});
  });

  server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto j = job(req.matches[1]);
    if (!j) return reply_error(res, 404, "not_found", "no job " + std::string(req.matches[1]));
    reply(res, 200, job_json(*j));
  });

  server.Get(R"(/advisories/([^/]+)/candidates)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto a = store_->get(id);
    if (!a) return reply_error(res, 404, "not_found", "no advisory " + id);
    if (!rankable(*a, res)) return;
    const auto top_k = top_k_param(req, res, config_.default_top_k);
    if (!top_k) return;
    const auto j = latest_job_for(id);
    if (j && (j->state == "queued" || j->state == "running"))
      return reply(res, 202, json{{"state", "pending"}, {"job_id", j->id}});
    if (!a->ranked) {
      if (j && j->state == "failed") return reply_error(res, status_for(Errc::repo_access), j->error, j->error_message);
      return reply_error(res, 404, "not_ranked", "advisory has not been ranked yet");
    }
    const bool any_ok = std::any_of(a->windows.begin(), a->windows.end(),
                                    [](const StoredWindow& w) { return w.error.empty(); });
    if (!any_ok && !a->windows.empty())
      return reply_error(res, 422, a->windows.front().error, a->windows.front().error_message);

    json windows = json::array();
    json flat = json::array();
    for (const auto& w : a->windows) {
      json wj = window_json(w, *top_k);
      for (const auto& c : wj["candidates"]) {
        json cj = c;
        cj["fixed_version"] = w.fixed_version;
        flat.push_back(std::move(cj));
      }
      windows.push_back(std::move(wj));
    }
    reply(res, 200, json{{"advisory_id", id}, {"state", a->queue_state()}, {"top_k", *top_k},
                         {"windows", windows}, {"candidates", flat}});
  });

  server.Post(R"(/advisories/([^/]+)/candidates/([^/]+)/decision)",
              [this](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req, res);
                if (!body) return;
                DecisionRequest dr;
                const auto d = parse_decision(body->value("decision", ""));
                if (!d || *d == Decision::not_in_window)
                  return reply_error(res, 400, "invalid_argument", "decision must be confirmed, rejected or pending");
                dr.decision = *d;
                dr.reviewer = body->value("reviewer", "");
                dr.note = body->value("note", "");
                dr.fixed_version = body->value("fixed_version", "");
                dr.override_confirm = body->value("override", false);
                if (dr.reviewer.empty()) return reply_error(res, 400, "invalid_argument", "reviewer is required");
                try {
                  const auto out = store_->decide(req.matches[1], req.matches[2], dr, now());
                  json side = json::array();
                  for (const auto& r : out.side_effects) side.push_back(record_json(r));
                  reply(res, 200, json{{"record", record_json(out.record)}, {"side_effects", side},
                                       {"unchanged", out.unchanged}});
                } catch (const Error& e) {
                  reply_error(res, status_for(e.code()), errc_name(e.code()), e.what());
                }
              });

  server.Post(R"(/advisories/([^/]+)/decision)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    DecisionRequest dr;
    const auto d = parse_decision(body->value("decision", ""));
    if (!d || (*d != Decision::not_in_window && *d != Decision::pending))
      return reply_error(res, 400, "invalid_argument", "decision must be not_in_window or pending");
    dr.decision = *d;
    dr.reviewer = body->value("reviewer", "");
    dr.note = body->value("note", "");
    if (dr.reviewer.empty()) return reply_error(res, 400, "invalid_argument", "reviewer is required");
    try {
      const auto out = store_->decide_advisory(req.matches[1], dr, now());
      reply(res, 200, json{{"record", record_json(out.record)}, {"unchanged", out.unchanged}});
    } catch (const Error& e) {
      reply_error(res, status_for(e.code()), errc_name(e.code()), e.what());
    }
  });

  server.Get("/backfill/export", [this](const httplib::Request&, httplib::Response& res) {
    const std::int64_t ts = now();
    json entries = json::array();
    for (const auto& e : store_->export_confirmed(ts))
      entries.push_back({{"advisory_id", e.advisory_id}, {"confirmed_shas", e.confirmed_shas},
                         {"repo_url", e.repo_url}, {"export_ts", e.export_ts}});
    res.set_header("Content-Disposition", "attachment; filename=\"backfill.json\"");
    reply(res, 200, json{{"export_ts", ts}, {"daily_submission_hint", kDailySubmissionHint},
                         {"count", entries.size()}, {"entries", entries}});
  });

  if (config_.static_dir) server.set_mount_point("/", config_.static_dir->string());
}

}  // namespace patchlink
