#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "llmgate/backend.hpp"
#include "llmgate/documents.hpp"
#include "llmgate/ids.hpp"
#include "llmgate/registry.hpp"

namespace llmgate {

struct FanoutRequest {
  std::string fanout_id;  // generated when empty
  Conversation conversation;
  std::vector<ModelId> model_ids;
  GenerationParams params;
  std::optional<PackedContext> context;
};

struct FanoutEvent {
  enum class Kind { token, complete };

  std::string fanout_id;
  std::uint64_t merge_seq = 0;
  Kind kind = Kind::token;
  TokenEvent inner;  // meaningful when kind == token

  bool is_complete() const noexcept { return kind == Kind::complete; }
};

/// Bounded broadcast buffer behind one fanout. Producers block while the
/// slowest subscriber is `capacity` events behind; nothing is dropped.
class EventFeed {
 public:
  EventFeed(std::string fanout_id, std::size_t capacity);

  /// Assigns merge_seq and appends; blocks on backpressure.
  void publish(const TokenEvent& event);
  void publish_complete();

  std::uint64_t subscribe();
  void unsubscribe(std::uint64_t subscriber);
  /// Blocks for the subscriber's next event; nullopt once the feed is drained
  /// past the complete marker or the feed was closed.
  std::optional<FanoutEvent> next(std::uint64_t subscriber);
  std::optional<FanoutEvent> next_for(std::uint64_t subscriber, std::chrono::milliseconds timeout);

  /// Drops backpressure and wakes all waiters; used on shutdown.
  void close();
  bool complete() const;

 private:
  void push_locked(FanoutEvent ev, std::unique_lock<std::mutex>& lock);
  void trim_locked();
  std::uint64_t min_cursor_locked() const;

  const std::string fanout_id_;
  const std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<FanoutEvent> buffer_;
  std::uint64_t base_ = 0;  // merge_seq of buffer_.front()
  std::uint64_t next_seq_ = 0;
  std::map<std::uint64_t, std::uint64_t> cursors_;
  std::uint64_t next_subscriber_ = 1;
  bool complete_ = false;
  bool closed_ = false;
};

/// One consumer's view of a merged fanout feed.
class FanoutStream {
 public:
  FanoutStream(std::shared_ptr<EventFeed> feed, std::string fanout_id, std::vector<ModelId> models);
  FanoutStream(FanoutStream&&) noexcept;
  FanoutStream& operator=(FanoutStream&&) noexcept;
  FanoutStream(const FanoutStream&) = delete;
  FanoutStream& operator=(const FanoutStream&) = delete;
  ~FanoutStream();

  const std::string& fanout_id() const noexcept { return fanout_id_; }
  const std::vector<ModelId>& models() const noexcept { return models_; }

  std::optional<FanoutEvent> next();
  std::optional<FanoutEvent> next_for(std::chrono::milliseconds timeout);
  /// Drains to the end of the feed.
  std::vector<FanoutEvent> collect();

 private:
  std::shared_ptr<EventFeed> feed_;
  std::uint64_t subscriber_ = 0;
  std::string fanout_id_;
  std::vector<ModelId> models_;
};

struct FanoutOptions {
  std::size_t max_width = 16;
  std::size_t buffer_capacity = 1024;
  std::size_t finished_history = 4096;
  /// Backend entry point; defaults to chat_completion.
  std::function<void(const BackendBinding&, const Prompt&, const GenerationParams&, const StreamOptions&,
                     const TokenSink&)>
      backend;
};

enum class CancelOutcome { cancelled, already_finished };

/// Places packed context ahead of the conversation as (part of) its system
/// message.
Conversation with_context(const Conversation& conversation, const PackedContext& context);

/// Dispatches one conversation to several models at once and merges their
/// token streams into a single feed.
class FanoutOrchestrator {
 public:
  FanoutOrchestrator(const ModelRegistry& registry, FanoutOptions options = {},
                     std::shared_ptr<IdSource> ids = nullptr);
  ~FanoutOrchestrator();
  FanoutOrchestrator(const FanoutOrchestrator&) = delete;
  FanoutOrchestrator& operator=(const FanoutOrchestrator&) = delete;

  /// Validates, subscribes the returned stream, then starts one producer per
  /// model. Throws Error(invalid_request | unknown_model).
  FanoutStream fanout(FanoutRequest request);

  /// Additional consumer; sees the feed from this point on.
  FanoutStream subscribe(const std::string& fanout_id);

  /// Throws Error(unknown_fanout) for ids never seen.
  CancelOutcome cancel(const std::string& fanout_id);

  std::vector<std::string> live_fanouts() const;
  bool is_live(const std::string& fanout_id) const;

  /// Cancels everything and waits for producers to exit.
  void shutdown();

 private:
  struct Run;

  void finish(const std::string& fanout_id);

  const ModelRegistry& registry_;
  FanoutOptions options_;
  std::shared_ptr<IdSource> ids_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Run>> live_;
  std::vector<std::shared_ptr<Run>> finished_runs_;  // awaiting join
  std::deque<std::string> finished_ids_;
  std::unordered_map<std::string, bool> finished_lookup_;
  bool shut_down_ = false;
};

}  // namespace llmgate
