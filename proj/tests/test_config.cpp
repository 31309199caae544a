#include <doctest.h>

#include "llmgate/config.hpp"
#include "llmgate/error.hpp"
#include "support.hpp"

using namespace llmgate;

namespace {

std::string bad_config_message(std::string_view text, const std::map<std::string, std::string>& env = {}) {
  try {
    parse_config(text, env);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::bad_config);
    return e.what();
  }
  FAIL("expected bad_config");
  return {};
}

}  // namespace

TEST_CASE("defaults") {
  const auto c = parse_config("");
  CHECK(c.bind_address == "127.0.0.1");
  CHECK(c.port == 8080);
  CHECK(c.max_fanout_width == 16);
  CHECK(c.chunk_tokens == 512);
  CHECK(c.chunk_overlap == 64);
  CHECK_FALSE(c.auth_token);
  CHECK_FALSE(c.deterministic_seed);
  CHECK(c.default_session == "default");
}

TEST_CASE("file values then environment overrides") {
  testing::TempDir dir;
  const auto path = dir.path() / "gateway.json";
  testing::write_text(path, R"({"port": 9000, "data_dir": "/tmp/x", "auth_token": "sekrit",
                              "deterministic_seed": 5, "fixed_created": 1700000000, "sync_writes": true})");
  const auto c = load_config(path, {{"LLMGATE_PORT", "9100"},
                                    {"LLMGATE_LOG_TOKEN_DELTAS", "1"},
                                    {"LLMGATE_CONFIG", "ignored"},
                                    {"HOME", "/root"}});
  CHECK(c.port == 9100);
  CHECK(c.data_dir == "/tmp/x");
  CHECK(c.auth_token == "sekrit");
  CHECK(c.deterministic_seed == 5u);
  CHECK(c.fixed_created == 1700000000);
  CHECK(c.sync_writes);
  CHECK(c.log_token_deltas);

  const auto j = c.to_json();
  CHECK(j["auth_token"] == "***");
  CHECK(j.dump().find("sekrit") == std::string::npos);
  CHECK(j["port"] == 9100);

  const auto none = load_config(std::nullopt, {{"LLMGATE_BIND_ADDRESS", "0.0.0.0"}});
  CHECK(none.bind_address == "0.0.0.0");
}

TEST_CASE("bad configuration names the key") {
  CHECK(bad_config_message(R"({"prot": 1})").find("prot") != std::string::npos);
  CHECK(bad_config_message(R"({"port": "eighty"})").find("'port'") != std::string::npos);
  CHECK(bad_config_message(R"({"port": 70000})").find("'port'") != std::string::npos);
  CHECK(bad_config_message(R"({"sync_writes": 1})").find("sync_writes") != std::string::npos);
  CHECK(bad_config_message(R"({"chunk_tokens": 64, "chunk_overlap": 64})").find("chunk_overlap") !=
        std::string::npos);
  CHECK(bad_config_message("{}", {{"LLMGATE_PORT", "12ab"}}).find("LLMGATE_PORT") != std::string::npos);
  CHECK(bad_config_message("{}", {{"LLMGATE_NOPE", "1"}}).find("nope") != std::string::npos);
  CHECK(bad_config_message("[1, 2]").find("object") != std::string::npos);
  CHECK(bad_config_message("{oops").find("JSON") != std::string::npos);

  testing::TempDir dir;
  CHECK_THROWS_AS(load_config(dir.path() / "missing.json", {}), Error);
}
