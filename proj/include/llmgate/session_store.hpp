#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "llmgate/conversation.hpp"
#include "llmgate/evaluation.hpp"

namespace llmgate {

enum class EventKind {
  conversation_turn,
  fanout_started,
  token_delta,
  generation_terminal,
  fanout_complete,
  document_ingested,
  score_recorded,
  vote_recorded,
};

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> event_kind_from_string(std::string_view name) noexcept;

struct SessionEvent {
  std::string session_id;
  std::int64_t offset = 0;
  EventKind kind = EventKind::conversation_turn;
  nlohmann::json payload;
  std::int64_t at_ms = 0;
};

struct FanoutRecord {
  std::vector<std::string> models;
  bool complete = false;
  std::map<std::string, nlohmann::json> terminals;  // by model
  std::map<std::string, double> scores;             // by model
};

/// State folded from a session's events.
struct MaterializedState {
  Conversation conversation;
  std::map<std::string, nlohmann::json> documents;  // doc_id -> metadata (no body)
  std::map<std::string, FanoutRecord> fanouts;
  std::vector<VoteRecord> votes;
  std::set<std::string> vote_ids;
  EloTable leaderboard;

  void apply(const SessionEvent& event);
  nlohmann::json to_json() const;
};

MaterializedState materialize(std::span<const SessionEvent> events);

struct SessionSnapshot {
  std::string session_id;
  std::int64_t as_of_offset = -1;  // -1 for an empty session
  nlohmann::json state;            // MaterializedState::to_json()

  nlohmann::json to_json() const;
  static SessionSnapshot from_json(const nlohmann::json& j);
};

struct SessionStoreOptions {
  std::filesystem::path data_dir;
  /// fdatasync after every append.
  bool sync = false;
  /// Replaces ::write for fault injection; same contract as write(2).
  std::function<long(int fd, const char* data, std::size_t size)> write_hook;
};

/// Append-only event logs, one file per session:
///   <data_dir>/sessions/<id>.log   "<offset> <crc32> <kind> <json>\n" lines
///   <data_dir>/sessions/<id>.snapshot.json
/// Each session has a single writer (an exclusive file lock held while the
/// store has it open); opening a session locked by another store throws
/// Error(session_locked).
class SessionStore {
 public:
  explicit SessionStore(SessionStoreOptions options);
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  /// Ids match [A-Za-z0-9._-]{1,128} and do not start with '.'.
  static bool valid_session_id(std::string_view id) noexcept;

  /// Idempotent.
  void create_session(const std::string& session_id);
  bool has_session(const std::string& session_id) const;
  std::vector<std::string> sessions() const;

  /// Returns the new offset once the record is written. A conversation-turn
  /// creates its session; other kinds need an existing one.
  /// Throws Error(unknown_session | storage_failure).
  std::int64_t append_event(const std::string& session_id, EventKind kind, nlohmann::json payload);

  /// Runs `validate` against the current state and appends only if it
  /// returns true, as one step. Returns nullopt when skipped; exceptions
  /// from `validate` propagate with nothing appended.
  std::optional<std::int64_t> append_event_checked(
      const std::string& session_id, EventKind kind, nlohmann::json payload,
      const std::function<bool(const MaterializedState&)>& validate);

  /// Throws Error(unknown_session).
  std::vector<SessionEvent> replay(const std::string& session_id) const;
  std::int64_t event_count(const std::string& session_id) const;
  /// Copy of the current materialized state. Throws Error(unknown_session).
  MaterializedState state(const std::string& session_id) const;

  /// Materializes the current prefix and writes the sidecar file atomically.
  SessionSnapshot snapshot(const std::string& session_id);
  std::optional<SessionSnapshot> load_snapshot(const std::string& session_id) const;

  const std::filesystem::path& directory() const noexcept { return dir_; }

 private:
  struct Session;

  std::shared_ptr<Session> open(const std::string& session_id, bool create) const;
  std::int64_t write_locked(Session& s, EventKind kind, nlohmann::json payload);

  SessionStoreOptions options_;
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::shared_ptr<Session>> open_;
};

}  // namespace llmgate
