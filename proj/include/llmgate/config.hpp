#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace llmgate {

struct GatewayConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "data";
  std::optional<std::filesystem::path> registry_seed;  // catalogue JSON; built-in catalogue when absent
  std::size_t max_fanout_width = 16;
  std::optional<std::string> auth_token;  // bearer token required on every route but /healthz
  std::optional<std::uint64_t> deterministic_seed;  // seeds ids; pins "created" with fixed_created
  std::optional<std::int64_t> fixed_created;
  std::size_t max_body_bytes = 10 * 1024 * 1024;
  std::size_t max_upload_bytes = 50 * 1024 * 1024;
  bool log_token_deltas = false;
  bool sync_writes = false;
  std::int64_t chunk_tokens = 512;
  std::int64_t chunk_overlap = 64;
  std::string default_session = "default";
  int worker_threads = 16;

  nlohmann::json to_json() const;
};

/// Environment variable prefix; a key "data_dir" is overridden by LLMGATE_DATA_DIR.
inline constexpr std::string_view kEnvPrefix = "LLMGATE_";

/// Reads the JSON config file (when given), then applies LLMGATE_* overrides
/// from `env`. Unknown keys and ill-typed values throw Error(bad_config) with
/// the key in the message.
GatewayConfig load_config(const std::optional<std::filesystem::path>& path,
                          const std::map<std::string, std::string>& env);
GatewayConfig parse_config(std::string_view json_text, const std::map<std::string, std::string>& env = {});

/// LLMGATE_* variables of the current process.
std::map<std::string, std::string> process_environment();

}  // namespace llmgate
