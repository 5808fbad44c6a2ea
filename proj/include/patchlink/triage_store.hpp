#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "patchlink/advisory.hpp"
#include "patchlink/features.hpp"
#include "patchlink/repo_window.hpp"

namespace patchlink {

enum class Decision { pending, confirmed, rejected, not_in_window };

std::string_view decision_name(Decision d) noexcept;
std::optional<Decision> parse_decision(std::string_view name) noexcept;

struct TriageRecord {
  std::string advisory_id;
  std::string fixed_version;  // empty for advisory-level decisions
  std::string sha;            // empty for advisory-level decisions
  Decision decision = Decision::pending;
  std::string reviewer;
  std::int64_t decided_at = 0;
  std::string note;

  bool operator==(const TriageRecord&) const = default;
};

struct StoredCandidate {
  std::string sha;
  double probability = 0.0;
  std::size_t rank_position = 0;
  FeatureVector features;
  std::string message;
  std::vector<FileDiff> files;
  TriageRecord record;
};

struct StoredWindow {
  std::string fixed_version;
  std::string error;  // why the window could not be ranked, empty otherwise
  std::string error_message;
  std::string fixed_tag;
  std::string prior_tag;
  std::size_t total = 0;
  std::vector<StoredCandidate> candidates;  // rank order
};

struct AdvisoryState {
  Advisory advisory;
  std::int64_t added_at = 0;
  bool ranked = false;
  std::int64_t ranked_at = 0;
  std::vector<StoredWindow> windows;
  std::optional<TriageRecord> advisory_decision;  // not_in_window flag

  // not_in_window, reviewed (every rankable window has a confirmed sha) or
  // pending.
  std::string queue_state() const;
  std::vector<std::string> confirmed_shas() const;
};

struct BackfillEntry {
  std::string advisory_id;
  std::vector<std::string> confirmed_shas;
  std::string repo_url;
  std::int64_t export_ts = 0;
};

struct DecisionRequest {
  Decision decision = Decision::pending;
  std::string reviewer;
  std::string note;
  std::string fixed_version;  // optional: picks the window when a sha is in several
  bool override_confirm = false;
};

struct DecisionOutcome {
  TriageRecord record;
  std::vector<TriageRecord> side_effects;  // auto-rejections, overridden confirms
  bool unchanged = false;                  // identical re-post
};

nlohmann::json record_json(const TriageRecord& r);
nlohmann::json candidate_json(const StoredCandidate& c);
nlohmann::json window_json(const StoredWindow& w, std::size_t top_k);

// Single-file store: every mutation is one JSON line appended and flushed to
// disk before the call returns; opening replays the log. A torn final line
// (crash mid-write) is dropped. The log is rewritten as a snapshot on open
// and after every `compact_every` appends.
class TriageStore {
 public:
  explicit TriageStore(std::filesystem::path file, std::size_t compact_every = 1000);
  ~TriageStore();
  TriageStore(const TriageStore&) = delete;
  TriageStore& operator=(const TriageStore&) = delete;

  // False when an advisory with this id exists already.
  bool add_advisory(const Advisory& advisory, std::int64_t now);

  // Replaces the advisory's windows. Decisions already taken on a
  // (fixed version, sha) are carried over; decided candidates missing from
  // the new ranking are kept at the end of their window.
  void put_ranking(const std::string& advisory_id, std::vector<StoredWindow> windows, std::int64_t now);

  // Throws Error{not_found} (advisory), Error{unknown_candidate},
  // Error{conflicting_confirm} or Error{invalid_argument}.
  DecisionOutcome decide(const std::string& advisory_id, const std::string& sha, const DecisionRequest& req,
                         std::int64_t now);
  // not_in_window, or pending to put the advisory back in the queue.
  DecisionOutcome decide_advisory(const std::string& advisory_id, const DecisionRequest& req, std::int64_t now);

  std::optional<AdvisoryState> get(const std::string& advisory_id) const;
  std::vector<AdvisoryState> list() const;
  std::vector<TriageRecord> confirmed_records() const;
  std::vector<BackfillEntry> export_confirmed(std::int64_t now) const;

  void compact();
  std::size_t appends_since_compaction() const;
  const std::filesystem::path& path() const noexcept { return file_; }

 private:
  void replay();
  void append_locked(const nlohmann::json& event);
  void apply(const nlohmann::json& event);
  std::vector<nlohmann::json> snapshot_events() const;
  void open_for_append();

  std::filesystem::path file_;
  std::size_t compact_every_;
  int fd_ = -1;
  std::size_t appends_ = 0;

  mutable std::mutex writer_mu_;       // serialises mutations
  mutable std::shared_mutex state_mu_;  // guards the in-memory state below
  std::vector<AdvisoryState> advisories_;  // insertion order
};

}  // namespace patchlink
