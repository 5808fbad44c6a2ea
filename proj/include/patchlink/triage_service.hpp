#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "patchlink/pipeline.hpp"
#include "patchlink/ranker.hpp"
#include "patchlink/triage_store.hpp"

namespace httplib {
class Server;
}

namespace patchlink {

struct ServiceConfig {
  std::filesystem::path store_path = "patchlink-store.jsonl";
  std::filesystem::path data_dir = default_data_dir();
  std::vector<std::filesystem::path> models;  // probabilities are averaged
  std::filesystem::path repo_cache = ".patchlink-cache/repos";
  std::size_t workers = 2;
  std::size_t default_top_k = 5;
  std::optional<std::filesystem::path> static_dir;
  std::size_t compact_every = 1000;
  std::function<std::int64_t()> clock;  // epoch seconds; system clock when empty
};

struct JobStatus {
  std::string id;
  std::string advisory_id;
  std::string state;  // queued, running, done, failed
  std::string error;
  std::string error_message;
  std::size_t top_k = 5;
};

class TriageService {
 public:
  explicit TriageService(ServiceConfig config);
  ~TriageService();
  TriageService(const TriageService&) = delete;
  TriageService& operator=(const TriageService&) = delete;

  // Registers every route (and the static mount, if configured).
  void mount(httplib::Server& server);

  TriageStore& store() noexcept { return *store_; }

  // Queues a ranking job; returns its id.
  std::string submit_rank(const std::string& advisory_id, std::size_t top_k);
  std::optional<JobStatus> job(const std::string& job_id) const;
  // Blocks until no job is queued or running.
  void wait_idle();

 private:
  void worker_loop();
  void run_job(const std::string& job_id);
  std::int64_t now() const;
  std::optional<JobStatus> latest_job_for(const std::string& advisory_id) const;

  ServiceConfig config_;
  std::unique_ptr<TriageStore> store_;
  std::unique_ptr<ReferenceProviders> providers_;
  std::vector<RankModel> models_;

  mutable std::mutex jobs_mu_;
  std::condition_variable jobs_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::string> queue_;
  std::map<std::string, JobStatus> jobs_;
  std::map<std::string, std::string> latest_job_;  // advisory id -> job id
  std::size_t running_ = 0;
  std::uint64_t next_job_ = 1;
  bool stopping_ = false;
  std::mutex clone_mu_;
  std::vector<std::thread> workers_;
};

}  // namespace patchlink
