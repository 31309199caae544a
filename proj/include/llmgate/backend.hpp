#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "llmgate/conversation.hpp"

namespace llmgate {

enum class BackendKind { openai_compat, mock };

std::string_view to_string(BackendKind kind) noexcept;

struct BackendBinding {
  BackendKind kind = BackendKind::mock;
  std::optional<std::string> base_url;  // openai_compat only, e.g. http://host:8000/v1
  std::optional<std::string> auth_token;
  std::chrono::milliseconds request_timeout{30'000};
  // mock only
  std::optional<std::chrono::microseconds> per_token_latency;
  std::optional<std::uint64_t> seed;
  std::optional<int> hallucination_period;
  std::optional<int> failure_after_tokens;

  /// Throws Error(invalid_binding) when a kind-specific field is misplaced.
  void validate() const;

  /// Parses "mock://?seed=7&latency_ms=2&hallucination_period=5&failure_after=3&timeout_ms=..."
  /// or "http(s)://host[:port]/base" (optionally "?timeout_ms=...").
  static BackendBinding from_url(std::string_view url);
};

struct GenerationParams {
  int max_tokens = 128;
  double temperature = 0.7;
  std::vector<std::string> stop;
  bool stream = true;

  void validate() const;
};

enum class TokenEventKind { delta, done, error };
enum class FinishReason { stop, length, error };

std::string_view to_string(TokenEventKind kind) noexcept;
std::string_view to_string(FinishReason reason) noexcept;

struct TokenEvent {
  std::string model_id;
  std::uint64_t seq = 0;
  TokenEventKind kind = TokenEventKind::delta;
  std::string text;                           // delta only
  FinishReason finish_reason = FinishReason::stop;  // done only
  std::string error_message;                  // error only
  std::chrono::steady_clock::time_point emitted_at{};

  bool terminal() const noexcept { return kind != TokenEventKind::delta; }
};

using TokenSink = std::function<void(const TokenEvent&)>;

struct StreamOptions {
  std::string model_id;
  std::string remote_model;  // "model" field sent to chat-completions servers
  std::stop_token stop;
};

/// Streams one generation into `sink`: zero or more deltas, then exactly one
/// terminal event. Backend failures become terminal error events; this never
/// throws for transport problems. Blocks until the terminal has been emitted.
void chat_completion(const BackendBinding& binding, const Prompt& prompt,
                     const GenerationParams& params, const StreamOptions& options,
                     const TokenSink& sink);

/// Deterministic in-process backend. Throws Error(non_mock_binding).
void mock_generate(const BackendBinding& binding, const Prompt& prompt,
                   const GenerationParams& params, const StreamOptions& options,
                   const TokenSink& sink);

/// OpenAI chat-completions client half.
void openai_chat_completion(const BackendBinding& binding, const Prompt& prompt,
                            const GenerationParams& params, const StreamOptions& options,
                            const TokenSink& sink);

std::vector<TokenEvent> collect(const BackendBinding& binding, const Prompt& prompt,
                                const GenerationParams& params,
                                const StreamOptions& options = {});

/// Concatenated delta text of an event sequence.
std::string delta_text(const std::vector<TokenEvent>& events);

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// The 32 words the mock substitutes for hallucinated tokens.
const std::array<std::string_view, 32>& hallucination_lexicon() noexcept;

/// Holds back text that might be the start of a stop sequence so that emitted
/// text never contains a completed stop sequence.
class StopMatcher {
 public:
  explicit StopMatcher(std::vector<std::string> stops);

  struct Step {
    std::string emit;
    bool stopped = false;
  };

  Step feed(std::string_view text);
  /// Releases held-back text once the stream ends without a stop.
  std::string flush();

 private:
  std::vector<std::string> stops_;
  std::string pending_;
};

/// Stamps model id, sequence numbers and timestamps, and guarantees a single
/// terminal event per generation.
class EventEmitter {
 public:
  EventEmitter(std::string model_id, const TokenSink& sink) : model_id_(std::move(model_id)), sink_(sink) {}

  void delta(std::string text);
  void done(FinishReason reason);
  void error(std::string message);

  bool finished() const noexcept { return finished_; }
  std::uint64_t emitted() const noexcept { return seq_; }

 private:
  void emit(TokenEvent event);

  std::string model_id_;
  const TokenSink& sink_;
  std::uint64_t seq_ = 0;
  bool finished_ = false;
};

/// Incremental decoder for "data: ...\n\n" server-sent event streams.
class SseDecoder {
 public:
  /// Appends bytes; returns the data payloads of every event completed so far.
  std::vector<std::string> feed(std::string_view bytes);
  bool has_partial() const noexcept;

 private:
  std::string buffer_;
};

}  // namespace llmgate
