#include "llmgate/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "llmgate/error.hpp"

extern char** environ;

namespace llmgate {

namespace {

[[noreturn]] void bad(std::string_view key, const std::string& why) {
  throw Error(ErrorCode::bad_config, "config key '" + std::string(key) + "': " + why);
}

// Environment values arrive as strings; coerce them to the JSON type a key expects.
enum class Kind { string, integer, boolean };

struct Field {
  std::string_view key;
  Kind kind;
  std::function<void(GatewayConfig&, const nlohmann::json&)> set;
};

std::int64_t as_int(std::string_view key, const nlohmann::json& v, std::int64_t lo, std::int64_t hi) {
  if (!v.is_number_integer()) bad(key, "expected an integer");
  const auto n = v.get<std::int64_t>();
  if (n < lo || n > hi) bad(key, "must be between " + std::to_string(lo) + " and " + std::to_string(hi));
  return n;
}

std::string as_string(std::string_view key, const nlohmann::json& v, bool allow_empty = false) {
  if (!v.is_string()) bad(key, "expected a string");
  auto s = v.get<std::string>();
  if (s.empty() && !allow_empty) bad(key, "must not be empty");
  return s;
}

bool as_bool(std::string_view key, const nlohmann::json& v) {
  if (!v.is_boolean()) bad(key, "expected true or false");
  return v.get<bool>();
}

const std::vector<Field>& fields() {
  constexpr std::int64_t kMax = INT64_MAX;
  static const std::vector<Field> table = {
      {"bind_address", Kind::string, [](GatewayConfig& c, const nlohmann::json& v) { c.bind_address = as_string("bind_address", v); }},
      {"port", Kind::integer, [](GatewayConfig& c, const nlohmann::json& v) { c.port = static_cast<int>(as_int("port", v, 0, 65535)); }},
      {"data_dir", Kind::string, [](GatewayConfig& c, const nlohmann::json& v) { c.data_dir = as_string("data_dir", v); }},
      {"registry_seed", Kind::string,
       [](GatewayConfig& c, const nlohmann::json& v) {
         if (v.is_null()) c.registry_seed.reset();
         else c.registry_seed = as_string("registry_seed", v);
       }},
      {"max_fanout_width", Kind::integer,
       [](GatewayConfig& c, const nlohmann::json& v) { c.max_fanout_width = static_cast<std::size_t>(as_int("max_fanout_width", v, 1, 1024)); }},
      {"auth_token", Kind::string,
       [](GatewayConfig& c, const nlohmann::json& v) {
         if (v.is_null()) c.auth_token.reset();
         else c.auth_token = as_string("auth_token", v);
       }},
      {"deterministic_seed", Kind::integer,
       [](GatewayConfig& c, const nlohmann::json& v) {
         if (v.is_null()) c.deterministic_seed.reset();
         else c.deterministic_seed = static_cast<std::uint64_t>(as_int("deterministic_seed", v, 0, kMax));
       }},
      {"fixed_created", Kind::integer,
       [](GatewayConfig& c, const nlohmann::json& v) {
         if (v.is_null()) c.fixed_created.reset();
         else c.fixed_created = as_int("fixed_created", v, 0, kMax);
       }},
      {"max_body_bytes", Kind::integer,
       [](GatewayConfig& c, const nlohmann::json& v) { c.max_body_bytes = static_cast<std::size_t>(as_int("max_body_bytes", v, 1, kMax)); }},
      {"max_upload_bytes", Kind::integer,
       [](GatewayConfig& c, const nlohmann::json& v) { c.max_upload_bytes = static_cast<std::size_t>(as_int("max_upload_bytes", v, 1, kMax)); }},
      {"log_token_deltas", Kind::boolean, [](GatewayConfig& c, const nlohmann::json& v) { c.log_token_deltas = as_bool("log_token_deltas", v); }},
      {"sync_writes", Kind::boolean, [](GatewayConfig& c, const nlohmann::json& v) { c.sync_writes = as_bool("sync_writes", v); }},
      {"chunk_tokens", Kind::integer, [](GatewayConfig& c, const nlohmann::json& v) { c.chunk_tokens = as_int("chunk_tokens", v, 1, kMax); }},
      {"chunk_overlap", Kind::integer, [](GatewayConfig& c, const nlohmann::json& v) { c.chunk_overlap = as_int("chunk_overlap", v, 0, kMax); }},
      {"default_session", Kind::string, [](GatewayConfig& c, const nlohmann::json& v) { c.default_session = as_string("default_session", v); }},
      {"worker_threads", Kind::integer,
       [](GatewayConfig& c, const nlohmann::json& v) { c.worker_threads = static_cast<int>(as_int("worker_threads", v, 1, 1024)); }},
  };
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

nlohmann::json from_env(const Field& f, std::string_view env_name, const std::string& raw) {
  switch (f.kind) {
    case Kind::string:
      return raw;
    case Kind::integer: {
      std::int64_t n = 0;
      const auto [end, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), n);
      if (ec != std::errc() || end != raw.data() + raw.size() || raw.empty()) {
        bad(f.key, "environment variable " + std::string(env_name) + "='" + raw + "' is not an integer");
      }
      return n;
    }
    case Kind::boolean:
      if (raw == "1" || raw == "true") return true;
      if (raw == "0" || raw == "false") return false;
      bad(f.key, "environment variable " + std::string(env_name) + "='" + raw + "' is not a boolean");
  }
  return nullptr;
}

void validate(const GatewayConfig& c) {
  if (c.chunk_overlap >= c.chunk_tokens) bad("chunk_overlap", "must be smaller than chunk_tokens");
}

GatewayConfig build(const nlohmann::json& doc, const std::map<std::string, std::string>& env) {
  GatewayConfig c;
  if (!doc.is_object()) throw Error(ErrorCode::bad_config, "config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    const Field* f = find_field(key);
    if (f == nullptr) bad(key, "unknown key");
    f->set(c, value);
  }
  for (const auto& [name, raw] : env) {
    if (!name.starts_with(kEnvPrefix)) continue;
    std::string key = name.substr(kEnvPrefix.size());
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (key == "config") continue;
    const Field* f = find_field(key);
    if (f == nullptr) bad(key, "unknown key (from environment variable " + name + ")");
    f->set(c, from_env(*f, name, raw));
  }
  validate(c);
  return c;
}

}  // namespace

nlohmann::json GatewayConfig::to_json() const {
  nlohmann::json j = {{"bind_address", bind_address},
                      {"port", port},
                      {"data_dir", data_dir.string()},
                      {"max_fanout_width", max_fanout_width},
                      {"max_body_bytes", max_body_bytes},
                      {"max_upload_bytes", max_upload_bytes},
                      {"log_token_deltas", log_token_deltas},
                      {"sync_writes", sync_writes},
                      {"chunk_tokens", chunk_tokens},
                      {"chunk_overlap", chunk_overlap},
                      {"default_session", default_session},
                      {"worker_threads", worker_threads}};
  j["registry_seed"] = registry_seed ? nlohmann::json(registry_seed->string()) : nlohmann::json(nullptr);
  j["auth_token"] = auth_token ? nlohmann::json("***") : nlohmann::json(nullptr);
  j["deterministic_seed"] = deterministic_seed ? nlohmann::json(*deterministic_seed) : nlohmann::json(nullptr);
  j["fixed_created"] = fixed_created ? nlohmann::json(*fixed_created) : nlohmann::json(nullptr);
  return j;
}

GatewayConfig parse_config(std::string_view json_text, const std::map<std::string, std::string>& env) {
  nlohmann::json doc;
  try {
    doc = json_text.empty() ? nlohmann::json::object() : nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::bad_config, std::string("config is not valid JSON: ") + e.what());
  }
  return build(doc, env);
}

GatewayConfig load_config(const std::optional<std::filesystem::path>& path,
                          const std::map<std::string, std::string>& env) {
  if (!path) return build(nlohmann::json::object(), env);
  std::ifstream in(*path, std::ios::binary);
  if (!in) throw Error(ErrorCode::bad_config, "cannot read config file " + path->string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), env);
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view entry(*e);
    if (!entry.starts_with(kEnvPrefix)) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(entry.substr(0, eq)), std::string(entry.substr(eq + 1)));
  }
  return env;
}

}  // namespace llmgate
