#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gma/agreement.hpp"

namespace gma::study {

struct PoolEntry {
  std::string snippet_id;
  std::string media;  // path relative to the media root
  friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

struct StudyPlan {
  std::string study_id;
  agree::Condition condition = agree::Condition::FaceBlurred;
  std::uint64_t seed = 0;
  int count = 3;
  int size = 280;
  std::vector<PoolEntry> pool;
  std::vector<std::vector<std::string>> subsets;  // presentation order

  size_t total() const { return static_cast<size_t>(count) * static_cast<size_t>(size); }
  /// Item at a global position across the concatenated subsets.
  const std::string& item(size_t position) const;
  friend bool operator==(const StudyPlan&, const StudyPlan&) = default;
};

/// Seeded draw of count x size distinct ids; throws PoolTooSmall.
std::vector<std::vector<std::string>> plan_subsets(const std::vector<PoolEntry>& pool, int count, int size,
                                                   std::uint64_t seed);

struct PlanRequest {
  std::string study_id;
  std::vector<PoolEntry> pool;
  int count = 3;
  int size = 280;
  std::uint64_t seed = 0;
  agree::Condition condition = agree::Condition::FaceBlurred;
};

nlohmann::json plan_to_json(const StudyPlan& plan);
StudyPlan plan_from_json(const nlohmann::json& j);

enum class SessionState { Active, Completed };

struct Session {
  std::string session_id;
  std::string study_id;
  std::string assessor;
  size_t cursor = 0;
  SessionState state = SessionState::Active;
  friend bool operator==(const Session&, const Session&) = default;
};

struct ItemView {
  std::string snippet_id;
  std::string media_url;
  size_t position = 0;  // 1-based across all subsets
  size_t total = 0;
  int subset = 0;  // 1-based
};

struct Completed {};

using NextItem = std::variant<ItemView, Completed>;

struct StoredLabel {
  std::uint64_t seq = 0;
  std::string session_id;
  std::string snippet_id;
  agree::RatingLabel label;
  std::string timestamp;
  friend bool operator==(const StoredLabel&, const StoredLabel&) = default;
};

struct Export {
  std::string csv;
  bool complete = false;
  size_t rows = 0;
};

/// ISO-8601 UTC wall clock.
std::string utc_now();

/// Append-only JSON-lines journal: {"seq","type","payload","checksum"}.
class Journal {
 public:
  struct Entry {
    std::uint64_t seq = 0;
    std::string type;
    nlohmann::json payload;
  };

  /// Opens (creating if absent) and replays the file. A torn or corrupt
  /// final line is cut off; damage before the last line throws JournalCorrupt.
  Journal(std::filesystem::path path, bool fsync);
  ~Journal();
  Journal(const Journal&) = delete;
  Journal& operator=(const Journal&) = delete;

  const std::vector<Entry>& replayed() const { return replayed_; }
  /// Writes one line and (optionally) fsyncs before returning.
  std::uint64_t append(const std::string& type, const nlohmann::json& payload);
  bool truncated_tail() const { return truncated_tail_; }

  static std::string encode(std::uint64_t seq, const std::string& type, const nlohmann::json& payload);

 private:
  std::filesystem::path path_;
  bool fsync_;
  int fd_ = -1;
  std::uint64_t next_seq_ = 1;
  std::vector<Entry> replayed_;
  bool truncated_tail_ = false;
};

class StudyService {
 public:
  struct Options {
    std::filesystem::path journal;
    bool fsync = true;
    std::function<std::string()> clock = utc_now;
  };

  explicit StudyService(Options options);

  /// Identical re-creation returns the stored plan; a different plan under
  /// an existing id throws StudyExists.
  StudyPlan create_study(const PlanRequest& request);
  StudyPlan study(const std::string& study_id) const;

  /// Returns the existing session of (study, assessor) if there is one.
  Session create_session(const std::string& study_id, const std::string& assessor);
  Session session(const std::string& session_id) const;

  NextItem next_item(const std::string& session_id) const;
  /// Returns the session after the label is journaled.
  Session submit_label(const std::string& session_id, const std::string& snippet_id,
                       const agree::RatingLabel& label);

  /// Rows ordered by (assessor, sequence number).
  Export export_labels(const std::string& study_id) const;
  std::vector<agree::LabelRecord> label_records(const std::string& study_id) const;

  /// Media path (relative to the media root) of a pooled snippet.
  std::optional<std::string> media_for(const std::string& snippet_id) const;

  /// Canonical dump of all state, for replay comparisons.
  std::string digest() const;

 private:
  void apply(const Journal::Entry& e);
  ItemView view_at(const StudyPlan& plan, size_t position) const;

  Options options_;
  mutable std::mutex mutex_;
  std::map<std::string, StudyPlan> studies_;
  std::map<std::string, Session> sessions_;
  std::map<std::pair<std::string, std::string>, std::string> session_by_assessor_;
  std::map<std::string, std::vector<StoredLabel>> labels_;  // by session
  std::map<std::string, std::string> media_;
  std::unique_ptr<Journal> journal_;
};

}  // namespace gma::study
