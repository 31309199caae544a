#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "llmgate/config.hpp"
#include "llmgate/error.hpp"
#include "llmgate/fanout.hpp"
#include "llmgate/library.hpp"
#include "llmgate/registry.hpp"
#include "llmgate/session_store.hpp"

namespace llmgate {

/// HTTP status and wire code for a library error.
struct ApiError {
  int http_status = 500;
  std::string code;  // model_not_found, context_overflow, invalid_request, backend_unavailable, internal, ...
  std::string message;

  /// {"error":{"code":...,"message":...}}
  std::string body() const;
  static ApiError from(const Error& e);
};

struct GatewayHooks {
  /// Replaces the backend dispatcher (tests).
  decltype(FanoutOptions::backend) backend;
  /// Replaces the session store write call (tests).
  decltype(SessionStoreOptions::write_hook) write_hook;
};

/// The HTTP service: OpenAI chat completions, arena fanout over SSE, votes,
/// leaderboard and documents.
class Gateway {
 public:
  /// Opens the data directory and restores ingested documents.
  /// Throws Error(storage_failure | session_locked | corrupt_log).
  Gateway(GatewayConfig config, std::shared_ptr<ModelRegistry> registry, GatewayHooks hooks = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds config.bind_address:config.port (0 picks a free port). Returns the
  /// bound port, or -1 when the address cannot be bound.
  int bind();
  /// Serves on the calling thread until stop(). Binds first if needed.
  bool serve();
  /// bind() + serve() on a background thread; returns the port or -1.
  int start();
  /// Cancels live fanouts and streams, lets them write their terminal frames,
  /// then closes the listener. Idempotent.
  void stop();

  int port() const noexcept;
  const GatewayConfig& config() const noexcept;
  ModelRegistry& registry();
  FanoutOrchestrator& orchestrator();
  SessionStore& store();
  DocumentLibrary& library();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace llmgate
