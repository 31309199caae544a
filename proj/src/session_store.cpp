#include "llmgate/session_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "llmgate/error.hpp"

namespace llmgate {

namespace fs = std::filesystem;

namespace {

std::string crc_hex(std::string_view data) {
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

std::string errno_text() { return std::strerror(errno); }

std::int64_t wall_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Parses one record line (without its newline); nullopt when malformed.
std::optional<SessionEvent> parse_record(std::string_view line, const std::string& session_id,
                                         std::int64_t expected_offset) {
  const auto s1 = line.find(' ');
  if (s1 == std::string_view::npos) return std::nullopt;
  const auto s2 = line.find(' ', s1 + 1);
  if (s2 == std::string_view::npos) return std::nullopt;
  const auto s3 = line.find(' ', s2 + 1);
  if (s3 == std::string_view::npos) return std::nullopt;

  const std::string_view offset_text = line.substr(0, s1);
  const std::string_view crc_text = line.substr(s1 + 1, s2 - s1 - 1);
  const std::string_view kind_text = line.substr(s2 + 1, s3 - s2 - 1);
  const std::string_view json_text = line.substr(s3 + 1);

  if (offset_text != std::to_string(expected_offset)) return std::nullopt;
  if (crc_text != crc_hex(json_text)) return std::nullopt;
  const auto kind = event_kind_from_string(kind_text);
  if (!kind) return std::nullopt;
  auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  const auto at = doc.find("at");
  const auto payload = doc.find("payload");
  if (at == doc.end() || !at->is_number_integer() || payload == doc.end()) return std::nullopt;

  SessionEvent ev;
  ev.session_id = session_id;
  ev.offset = expected_offset;
  ev.kind = *kind;
  ev.at_ms = at->get<std::int64_t>();
  ev.payload = std::move(*payload);
  return ev;
}

long default_write(int fd, const char* data, std::size_t size) { return ::write(fd, data, size); }

}  // namespace

struct SessionStore::Session {
  std::string id;
  fs::path log_path;
  fs::path snapshot_path;
  int fd = -1;
  off_t size = 0;
  std::mutex mutex;
  std::vector<SessionEvent> events;
  MaterializedState state;

  ~Session() {
    if (fd >= 0) ::close(fd);
  }
};

SessionStore::SessionStore(SessionStoreOptions options) : options_(std::move(options)) {
  dir_ = options_.data_dir / "sessions";
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::storage_failure, "cannot create " + dir_.string() + ": " + ec.message());
  if (!options_.write_hook) options_.write_hook = default_write;
}

SessionStore::~SessionStore() = default;

bool SessionStore::valid_session_id(std::string_view id) noexcept {
  if (id.empty() || id.size() > 128 || id.front() == '.') return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                    c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

std::shared_ptr<SessionStore::Session> SessionStore::open(const std::string& session_id, bool create) const {
  if (!valid_session_id(session_id)) {
    throw Error(ErrorCode::invalid_request, "invalid session id '" + session_id + "'");
  }
  std::lock_guard lock(mutex_);
  if (const auto it = open_.find(session_id); it != open_.end()) return it->second;

  auto s = std::make_shared<Session>();
  s->id = session_id;
  s->log_path = dir_ / (session_id + ".log");
  s->snapshot_path = dir_ / (session_id + ".snapshot.json");
  if (!create && !fs::exists(s->log_path)) {
    throw Error(ErrorCode::unknown_session, "unknown session '" + session_id + "'");
  }

  s->fd = ::open(s->log_path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (s->fd < 0) {
    throw Error(ErrorCode::storage_failure, "cannot open " + s->log_path.string() + ": " + errno_text());
  }
  if (::flock(s->fd, LOCK_EX | LOCK_NB) != 0) {
    const bool busy = errno == EWOULDBLOCK;
    const auto why = errno_text();
    if (busy) throw Error(ErrorCode::session_locked, "session '" + session_id + "' is open in another writer");
    throw Error(ErrorCode::storage_failure, "cannot lock " + s->log_path.string() + ": " + why);
  }

  std::string data;
  {
    std::ifstream in(s->log_path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    data = std::move(buf).str();
  }

  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    const bool last = nl == std::string::npos || nl + 1 == data.size();
    std::optional<SessionEvent> ev;
    if (nl != std::string::npos) {
      ev = parse_record(std::string_view(data).substr(pos, nl - pos), session_id,
                        static_cast<std::int64_t>(s->events.size()));
    }
    if (!ev) {
      if (!last) {
        throw Error(ErrorCode::corrupt_log, "session '" + session_id + "' has a corrupt record at byte " +
                                                std::to_string(pos) + " followed by further records");
      }
      spdlog::warn("session '{}': truncating corrupt trailing record at byte {} ({} bytes)", session_id, pos,
                   data.size() - pos);
      if (::ftruncate(s->fd, static_cast<off_t>(pos)) != 0) {
        throw Error(ErrorCode::storage_failure, "cannot truncate " + s->log_path.string() + ": " + errno_text());
      }
      data.resize(pos);
      break;
    }
    s->state.apply(*ev);
    s->events.push_back(std::move(*ev));
    pos = nl + 1;
  }
  s->size = static_cast<off_t>(data.size());
  open_.emplace(session_id, s);
  return s;
}

void SessionStore::create_session(const std::string& session_id) { open(session_id, true); }

bool SessionStore::has_session(const std::string& session_id) const {
  if (!valid_session_id(session_id)) return false;
  {
    std::lock_guard lock(mutex_);
    if (open_.contains(session_id)) return true;
  }
  return fs::exists(dir_ / (session_id + ".log"));
}

std::vector<std::string> SessionStore::sessions() const {
  std::set<std::string> ids;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir_, ec)) {
    const auto name = entry.path().filename().string();
    if (name.ends_with(".log")) {
      const auto id = name.substr(0, name.size() - 4);
      if (valid_session_id(id)) ids.insert(id);
    }
  }
  std::lock_guard lock(mutex_);
  for (const auto& [id, _] : open_) ids.insert(id);
  return {ids.begin(), ids.end()};
}

std::int64_t SessionStore::write_locked(Session& s, EventKind kind, nlohmann::json payload) {
  const std::int64_t offset = static_cast<std::int64_t>(s.events.size());
  const std::int64_t at = wall_ms();
  nlohmann::json envelope = {{"at", at}, {"payload", std::move(payload)}};
  const std::string body = envelope.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  std::string line = std::to_string(offset);
  line += ' ';
  line += crc_hex(body);
  line += ' ';
  line += to_string(kind);
  line += ' ';
  line += body;
  line += '\n';

  const auto fail = [&](const std::string& what) {
    const auto why = errno_text();
    if (::ftruncate(s.fd, s.size) != 0) {
      spdlog::error("session '{}': cannot roll back failed append: {}", s.id, errno_text());
    }
    return Error(ErrorCode::storage_failure, "append to session '" + s.id + "' failed: " + what + ": " + why);
  };

  std::size_t written = 0;
  while (written < line.size()) {
    errno = 0;
    const long n = options_.write_hook(s.fd, line.data() + written, line.size() - written);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      if (errno == 0) errno = EIO;
      throw fail("write");
    }
    written += static_cast<std::size_t>(n);
  }
  if (options_.sync && ::fdatasync(s.fd) != 0) throw fail("fdatasync");
  s.size += static_cast<off_t>(line.size());

  SessionEvent ev;
  ev.session_id = s.id;
  ev.offset = offset;
  ev.kind = kind;
  ev.at_ms = at;
  // Round-trip through the written text so memory matches what replay reads.
  ev.payload = nlohmann::json::parse(body).at("payload");
  s.state.apply(ev);
  s.events.push_back(std::move(ev));
  return offset;
}

std::int64_t SessionStore::append_event(const std::string& session_id, EventKind kind, nlohmann::json payload) {
  auto s = open(session_id, kind == EventKind::conversation_turn);
  std::lock_guard lock(s->mutex);
  return write_locked(*s, kind, std::move(payload));
}

std::optional<std::int64_t> SessionStore::append_event_checked(
    const std::string& session_id, EventKind kind, nlohmann::json payload,
    const std::function<bool(const MaterializedState&)>& validate) {
  auto s = open(session_id, kind == EventKind::conversation_turn);
  std::lock_guard lock(s->mutex);
  if (!validate(s->state)) return std::nullopt;
  return write_locked(*s, kind, std::move(payload));
}

std::vector<SessionEvent> SessionStore::replay(const std::string& session_id) const {
  auto s = open(session_id, false);
  std::lock_guard lock(s->mutex);
  return s->events;
}

std::int64_t SessionStore::event_count(const std::string& session_id) const {
  auto s = open(session_id, false);
  std::lock_guard lock(s->mutex);
  return static_cast<std::int64_t>(s->events.size());
}

MaterializedState SessionStore::state(const std::string& session_id) const {
  auto s = open(session_id, false);
  std::lock_guard lock(s->mutex);
  return s->state;
}

SessionSnapshot SessionStore::snapshot(const std::string& session_id) {
  auto s = open(session_id, false);
  SessionSnapshot snap;
  snap.session_id = session_id;
  {
    std::lock_guard lock(s->mutex);
    snap.as_of_offset = static_cast<std::int64_t>(s->events.size()) - 1;
    snap.state = s->state.to_json();
  }
  const fs::path tmp = s->snapshot_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << snap.to_json().dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    if (!out.flush()) throw Error(ErrorCode::storage_failure, "cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, s->snapshot_path, ec);
  if (ec) throw Error(ErrorCode::storage_failure, "cannot publish snapshot: " + ec.message());
  return snap;
}

std::optional<SessionSnapshot> SessionStore::load_snapshot(const std::string& session_id) const {
  if (!valid_session_id(session_id)) return std::nullopt;
  const fs::path path = dir_ / (session_id + ".snapshot.json");
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::corrupt_log, "snapshot " + path.string() + " is not valid JSON");
  return SessionSnapshot::from_json(doc);
}

}  // namespace llmgate
