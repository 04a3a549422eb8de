#include "gma/study.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

#include "gma/errors.hpp"
#include "gma/rng.hpp"

namespace gma::study {

using nlohmann::json;

const std::string& StudyPlan::item(size_t position) const {
  const auto s = static_cast<size_t>(size);
  return subsets.at(position / s).at(position % s);
}

std::vector<std::vector<std::string>> plan_subsets(const std::vector<PoolEntry>& pool, int count, int size,
                                                   std::uint64_t seed) {
  if (count < 1 || size < 1) throw ConfigError("subset count and size must be >= 1");
  std::set<std::string> seen;
  for (const auto& e : pool) {
    if (e.snippet_id.empty()) throw DataError("pool contains an empty snippet id");
    if (!seen.insert(e.snippet_id).second) throw DataError(fmt::format("duplicate snippet id {} in pool", e.snippet_id));
  }
  const size_t need = static_cast<size_t>(count) * static_cast<size_t>(size);
  if (pool.size() < need) {
    throw PoolTooSmall(fmt::format("pool of {} cannot fill {} subsets of {}", pool.size(), count, size));
  }
  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `need` slots are a uniform draw without replacement.
  for (size_t i = 0; i < need; ++i) {
    const size_t j = i + static_cast<size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<std::string>> subsets(static_cast<size_t>(count));
  for (size_t i = 0; i < need; ++i) subsets[i / static_cast<size_t>(size)].push_back(pool[order[i]].snippet_id);
  return subsets;
}

json plan_to_json(const StudyPlan& plan) {
  json pool = json::array();
  for (const auto& e : plan.pool) pool.push_back({{"snippet_id", e.snippet_id}, {"media", e.media}});
  return {{"study_id", plan.study_id},
          {"condition", agree::to_string(plan.condition)},
          {"seed", plan.seed},
          {"count", plan.count},
          {"size", plan.size},
          {"pool", pool},
          {"subsets", plan.subsets}};
}

StudyPlan plan_from_json(const json& j) {
  StudyPlan p;
  p.study_id = j.at("study_id").get<std::string>();
  p.condition = agree::parse_condition(j.at("condition").get<std::string>());
  p.seed = j.at("seed").get<std::uint64_t>();
  p.count = j.at("count").get<int>();
  p.size = j.at("size").get<int>();
  for (const auto& e : j.at("pool")) p.pool.push_back({e.at("snippet_id"), e.value("media", "")});
  p.subsets = j.at("subsets").get<std::vector<std::vector<std::string>>>();
  return p;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Journal

namespace {

std::uint32_t checksum_of(std::uint64_t seq, const std::string& type, const json& payload) {
  const std::string canonical = fmt::format("{}\t{}\t{}", seq, type, payload.dump());
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(canonical.data()), static_cast<uInt>(canonical.size())));
}

std::optional<Journal::Entry> decode(const std::string& line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  if (!j.contains("seq") || !j.contains("type") || !j.contains("payload") || !j.contains("checksum")) {
    return std::nullopt;
  }
  if (!j["seq"].is_number_unsigned() || !j["type"].is_string() || !j["checksum"].is_number_unsigned()) {
    return std::nullopt;
  }
  Journal::Entry e{j["seq"].get<std::uint64_t>(), j["type"].get<std::string>(), j["payload"]};
  if (checksum_of(e.seq, e.type, e.payload) != j["checksum"].get<std::uint32_t>()) return std::nullopt;
  return e;
}

void write_all(int fd, const std::string& data, const std::filesystem::path& path) {
  size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw DataError(fmt::format("journal write to {} failed: {}", path.string(), std::strerror(errno)));
    }
    off += static_cast<size_t>(n);
  }
}

}  // namespace

std::string Journal::encode(std::uint64_t seq, const std::string& type, const json& payload) {
  return json{{"seq", seq}, {"type", type}, {"payload", payload}, {"checksum", checksum_of(seq, type, payload)}}
             .dump() +
         "\n";
}

Journal::Journal(std::filesystem::path path, bool fsync) : path_(std::move(path)), fsync_(fsync) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::string content;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_, std::ios::binary);
    content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  size_t good_end = 0;
  size_t pos = 0;
  while (pos < content.size()) {
    const size_t nl = content.find('\n', pos);
    const size_t end = nl == std::string::npos ? content.size() : nl;
    const std::string line = content.substr(pos, end - pos);
    const size_t next = nl == std::string::npos ? content.size() : nl + 1;
    if (line.empty()) {
      pos = next;
      continue;
    }
    auto entry = decode(line);
    const bool last = content.find_first_not_of("\n", next) == std::string::npos;
    if (!entry || entry->seq != next_seq_) {
      if (last && (!entry || nl == std::string::npos)) {
        truncated_tail_ = true;
        break;
      }
      throw JournalCorrupt(fmt::format("journal {} is damaged at byte {}", path_.string(), pos));
    }
    replayed_.push_back(std::move(*entry));
    ++next_seq_;
    good_end = nl == std::string::npos ? content.size() : next;
    pos = next;
  }
  if (truncated_tail_) std::filesystem::resize_file(path_, good_end);

  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw DataError(fmt::format("cannot open journal {}: {}", path_.string(), std::strerror(errno)));
  if (good_end > 0 && content[good_end - 1] != '\n') write_all(fd_, "\n", path_);
}

Journal::~Journal() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t Journal::append(const std::string& type, const json& payload) {
  const std::uint64_t seq = next_seq_;
  write_all(fd_, encode(seq, type, payload), path_);
  if (fsync_ && ::fsync(fd_) != 0) {
    throw DataError(fmt::format("fsync of {} failed: {}", path_.string(), std::strerror(errno)));
  }
  ++next_seq_;
  return seq;
}

// ---------------------------------------------------------------------------
// Service

StudyService::StudyService(Options options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = utc_now;
  journal_ = std::make_unique<Journal>(options_.journal, options_.fsync);
  for (const auto& e : journal_->replayed()) {
    try {
      apply(e);
    } catch (const nlohmann::json::exception& ex) {
      throw JournalCorrupt(fmt::format("journal entry {} is malformed: {}", e.seq, ex.what()));
    }
  }
}

void StudyService::apply(const Journal::Entry& e) {
  const json& p = e.payload;
  if (e.type == "study_created") {
    StudyPlan plan = plan_from_json(p);
    for (const auto& entry : plan.pool) media_[entry.snippet_id] = entry.media;
    studies_[plan.study_id] = std::move(plan);
  } else if (e.type == "session_created") {
    Session s{p.at("session_id"), p.at("study_id"), p.at("assessor"), 0, SessionState::Active};
    if (!studies_.count(s.study_id)) throw JournalCorrupt("session refers to an unknown study");
    session_by_assessor_[{s.study_id, s.assessor}] = s.session_id;
    sessions_[s.session_id] = s;
  } else if (e.type == "label") {
    const std::string sid = p.at("session_id");
    auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw JournalCorrupt("label refers to an unknown session");
    StoredLabel l;
    l.seq = e.seq;
    l.session_id = sid;
    l.snippet_id = p.at("snippet_id");
    l.label.value = agree::parse_label_value(p.at("label").get<std::string>());
    if (p.contains("reason")) l.label.reason = agree::parse_na_reason(p.at("reason").get<std::string>());
    l.timestamp = p.at("timestamp");
    labels_[sid].push_back(std::move(l));
    Session& s = it->second;
    ++s.cursor;
    if (s.cursor >= studies_.at(s.study_id).total()) s.state = SessionState::Completed;
  } else {
    throw JournalCorrupt(fmt::format("unknown journal entry type '{}'", e.type));
  }
}

StudyPlan StudyService::create_study(const PlanRequest& request) {
  if (request.study_id.empty()) throw ConfigError("study id must not be empty");
  StudyPlan plan;
  plan.study_id = request.study_id;
  plan.condition = request.condition;
  plan.seed = request.seed;
  plan.count = request.count;
  plan.size = request.size;
  plan.pool = request.pool;
  plan.subsets = plan_subsets(request.pool, request.count, request.size, request.seed);

  std::lock_guard lock(mutex_);
  if (auto it = studies_.find(plan.study_id); it != studies_.end()) {
    if (it->second == plan) return it->second;
    throw StudyExists(fmt::format("study {} already exists with a different plan", plan.study_id));
  }
  for (const auto& entry : plan.pool) {
    auto it = media_.find(entry.snippet_id);
    if (it != media_.end() && it->second != entry.media) {
      throw DataError(fmt::format("snippet {} is already registered with media {}", entry.snippet_id, it->second));
    }
  }
  const Journal::Entry e{journal_->append("study_created", plan_to_json(plan)), "study_created", plan_to_json(plan)};
  apply(e);
  return studies_.at(plan.study_id);
}

StudyPlan StudyService::study(const std::string& study_id) const {
  std::lock_guard lock(mutex_);
  auto it = studies_.find(study_id);
  if (it == studies_.end()) throw UnknownStudy(fmt::format("unknown study {}", study_id));
  return it->second;
}

Session StudyService::create_session(const std::string& study_id, const std::string& assessor) {
  if (assessor.empty()) throw ConfigError("assessor code must not be empty");
  std::lock_guard lock(mutex_);
  if (!studies_.count(study_id)) throw UnknownStudy(fmt::format("unknown study {}", study_id));
  if (auto it = session_by_assessor_.find({study_id, assessor}); it != session_by_assessor_.end()) {
    return sessions_.at(it->second);
  }
  const std::string id = fmt::format("sess-{:04d}", sessions_.size() + 1);
  const json payload{{"session_id", id}, {"study_id", study_id}, {"assessor", assessor}};
  apply({journal_->append("session_created", payload), "session_created", payload});
  return sessions_.at(id);
}

Session StudyService::session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw UnknownSession(fmt::format("unknown session {}", session_id));
  return it->second;
}

ItemView StudyService::view_at(const StudyPlan& plan, size_t position) const {
  ItemView v;
  v.snippet_id = plan.item(position);
  v.media_url = "/media/" + v.snippet_id;
  v.position = position + 1;
  v.total = plan.total();
  v.subset = static_cast<int>(position / static_cast<size_t>(plan.size)) + 1;
  return v;
}

NextItem StudyService::next_item(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw UnknownSession(fmt::format("unknown session {}", session_id));
  const Session& s = it->second;
  if (s.state == SessionState::Completed) return Completed{};
  return view_at(studies_.at(s.study_id), s.cursor);
}

Session StudyService::submit_label(const std::string& session_id, const std::string& snippet_id,
                                   const agree::RatingLabel& label) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw UnknownSession(fmt::format("unknown session {}", session_id));
  const Session& s = it->second;
  if (auto l = labels_.find(session_id); l != labels_.end()) {
    for (const auto& stored : l->second) {
      if (stored.snippet_id == snippet_id) {
        throw AlreadyLabelled(fmt::format("snippet {} is already labelled in this session", snippet_id));
      }
    }
  }
  const StudyPlan& plan = studies_.at(s.study_id);
  if (s.state == SessionState::Completed || plan.item(s.cursor) != snippet_id) {
    throw OutOfOrder(fmt::format("snippet {} is not the current item", snippet_id));
  }
  label.validate();
  json payload{{"session_id", session_id},
               {"snippet_id", snippet_id},
               {"label", agree::to_string(label.value)},
               {"timestamp", options_.clock()}};
  if (label.reason) payload["reason"] = agree::to_string(*label.reason);
  apply({journal_->append("label", payload), "label", payload});
  return sessions_.at(session_id);
}

std::vector<agree::LabelRecord> StudyService::label_records(const std::string& study_id) const {
  std::lock_guard lock(mutex_);
  auto st = studies_.find(study_id);
  if (st == studies_.end()) throw UnknownStudy(fmt::format("unknown study {}", study_id));
  const StudyPlan& plan = st->second;
  std::map<std::string, int> subset_of;
  for (size_t i = 0; i < plan.subsets.size(); ++i) {
    for (const auto& id : plan.subsets[i]) subset_of[id] = static_cast<int>(i) + 1;
  }
  std::vector<std::pair<std::pair<std::string, std::uint64_t>, agree::LabelRecord>> rows;
  for (const auto& [sid, s] : sessions_) {
    if (s.study_id != study_id) continue;
    auto l = labels_.find(sid);
    if (l == labels_.end()) continue;
    for (const auto& stored : l->second) {
      rows.push_back({{s.assessor, stored.seq},
                      {stored.snippet_id, s.assessor, plan.condition, subset_of.at(stored.snippet_id), stored.label,
                       stored.timestamp}});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<agree::LabelRecord> out;
  for (auto& r : rows) out.push_back(std::move(r.second));
  return out;
}

Export StudyService::export_labels(const std::string& study_id) const {
  const auto records = label_records(study_id);
  Export ex;
  std::ostringstream out;
  agree::write_labels_csv(out, records);
  ex.csv = out.str();
  ex.rows = records.size();
  std::lock_guard lock(mutex_);
  bool any = false;
  ex.complete = true;
  for (const auto& [sid, s] : sessions_) {
    if (s.study_id != study_id) continue;
    any = true;
    if (s.state != SessionState::Completed) ex.complete = false;
  }
  ex.complete = ex.complete && any;
  return ex;
}

std::optional<std::string> StudyService::media_for(const std::string& snippet_id) const {
  std::lock_guard lock(mutex_);
  auto it = media_.find(snippet_id);
  if (it == media_.end()) return std::nullopt;
  return it->second;
}

std::string StudyService::digest() const {
  std::lock_guard lock(mutex_);
  json j;
  j["studies"] = json::array();
  for (const auto& [id, plan] : studies_) j["studies"].push_back(plan_to_json(plan));
  j["sessions"] = json::array();
  for (const auto& [id, s] : sessions_) {
    j["sessions"].push_back({{"id", id},
                             {"study", s.study_id},
                             {"assessor", s.assessor},
                             {"cursor", s.cursor},
                             {"completed", s.state == SessionState::Completed}});
  }
  j["labels"] = json::array();
  for (const auto& [sid, list] : labels_) {
    for (const auto& l : list) {
      j["labels"].push_back({{"seq", l.seq},
                             {"session", sid},
                             {"snippet", l.snippet_id},
                             {"label", agree::to_string(l.label.value)},
                             {"reason", l.label.reason ? std::string(agree::to_string(*l.label.reason)) : ""},
                             {"timestamp", l.timestamp}});
    }
  }
  return j.dump();
}

}  // namespace gma::study
