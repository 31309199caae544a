#include <algorithm>
#include <limits>
#include <condition_variable>
#include <mutex>
#include <sstream>

#include "llmgate/backend.hpp"
#include "llmgate/error.hpp"

namespace llmgate {

const std::array<std::string_view, 32>& hallucination_lexicon() noexcept {
  static constexpr std::array<std::string_view, 32> words = {
      "aurora", "basalt",  "cobalt",  "dynamo", "ember",  "fjord",    "glacier", "harbor",
      "indigo", "jasper",  "kelp",    "lantern", "meteor", "nebula",  "obsidian", "prism",
      "quartz", "raven",   "saffron", "tundra", "umbra",  "velvet",   "willow",  "xenon",
      "yarrow", "zephyr",  "atlas",   "beacon", "cipher", "delta",    "echo",    "fable",
  };
  return words;
}

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) words.push_back(std::move(word));
  return words;
}

// Returns false if the stop token fired before the deadline.
bool sleep_until(std::chrono::steady_clock::time_point deadline, const std::stop_token& stop) {
  if (stop.stop_requested()) return false;
  if (std::chrono::steady_clock::now() >= deadline) return true;
  std::mutex m;
  std::condition_variable_any cv;
  std::unique_lock lock(m);
  cv.wait_until(lock, stop, deadline, [] { return false; });
  return !stop.stop_requested();
}

}  // namespace

void mock_generate(const BackendBinding& binding, const Prompt& prompt,
                   const GenerationParams& params, const StreamOptions& options,
                   const TokenSink& sink) {
  if (binding.kind != BackendKind::mock) {
    throw Error(ErrorCode::non_mock_binding, "mock_generate called with a non-mock binding");
  }
  EventEmitter out(options.model_id, sink);

  const ChatMessage* last_user = nullptr;
  for (auto it = prompt.messages.rbegin(); it != prompt.messages.rend(); ++it) {
    if (it->role == Role::user) {
      last_user = &*it;
      break;
    }
  }
  const auto words = split_words(last_user ? std::string_view(last_user->content)
                                           : std::string_view(prompt.text));
  const auto total = static_cast<std::uint64_t>(std::max(params.max_tokens, 0));

  if (total == 0) {
    out.done(FinishReason::length);
    return;
  }
  if (words.empty()) {
    out.done(FinishReason::stop);
    return;
  }

  const auto& lexicon = hallucination_lexicon();
  SplitMix64 rng(binding.seed.value_or(0));
  StopMatcher matcher(params.stop);
  const auto latency = binding.per_token_latency.value_or(std::chrono::microseconds{0});
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t period = binding.hallucination_period ? static_cast<std::uint64_t>(*binding.hallucination_period) : 0;
  constexpr auto kNever = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t failure_at =
      binding.failure_after_tokens ? static_cast<std::uint64_t>(*binding.failure_after_tokens) : kNever;

  for (std::uint64_t t = 0; t < total; ++t) {
    if (t == failure_at) {
      out.delta(matcher.flush());
      out.error("injected backend failure after " + std::to_string(t) + " tokens");
      return;
    }
    if (!sleep_until(start + latency * static_cast<std::int64_t>(t + 1), options.stop)) {
      out.error("cancelled");
      return;
    }
    std::string token;
    if (period != 0 && (t + 1) % period == 0) {
      token = lexicon[rng.next() % lexicon.size()];
    } else {
      token = words[t % words.size()];
    }
    token.push_back(' ');
    auto step = matcher.feed(token);
    out.delta(std::move(step.emit));
    if (step.stopped) {
      out.done(FinishReason::stop);
      return;
    }
  }
  out.delta(matcher.flush());
  if (failure_at != kNever && failure_at >= total) {
    out.error("injected backend failure after " + std::to_string(total) + " tokens");
    return;
  }
  out.done(FinishReason::length);
}

}  // namespace llmgate
