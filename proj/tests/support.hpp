#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "llmgate/backend.hpp"
#include "llmgate/registry.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("llmgate-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

inline void write_text(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline fs::path fixture(std::string_view name) { return fs::path(LLMGATE_FIXTURE_DIR) / name; }

/// Registers mock-backed models ("name", "mock://?...") under the mock template.
inline std::shared_ptr<llmgate::ModelRegistry> mock_registry(
    const std::vector<std::pair<std::string, std::string>>& models, int context_window = 4096) {
  auto r = std::make_shared<llmgate::ModelRegistry>();
  for (const auto& [name, url] : models) {
    r->register_backend(name + "@backend", llmgate::BackendBinding::from_url(url));
    llmgate::ModelDescriptor d;
    d.name = name;
    d.id = llmgate::ModelId{name};
    d.family = llmgate::Family::mock;
    d.context_window = context_window;
    d.template_id = "mock";
    d.backend_id = name + "@backend";
    r->register_model(d);
  }
  return r;
}

inline llmgate::Conversation user_turn(std::string text) {
  llmgate::Conversation c;
  c.messages.push_back({llmgate::Role::user, std::move(text)});
  return c;
}

/// "data: <payload>\n\n" frames of an SSE body, payloads only.
inline std::vector<std::string> sse_payloads(std::string_view body) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto end = body.find("\n\n", pos);
    if (end == std::string_view::npos) break;
    auto frame = body.substr(pos, end - pos);
    if (frame.starts_with("data: ")) out.emplace_back(frame.substr(6));
    pos = end + 2;
  }
  return out;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace testing
