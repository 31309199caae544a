#include <charconv>

#include "llmgate/backend.hpp"
#include "llmgate/error.hpp"

namespace llmgate {

std::string_view to_string(BackendKind kind) noexcept {
  return kind == BackendKind::mock ? "mock" : "openai_compat";
}

std::string_view to_string(TokenEventKind kind) noexcept {
  switch (kind) {
    case TokenEventKind::delta: return "delta";
    case TokenEventKind::done: return "done";
    case TokenEventKind::error: return "error";
  }
  return "delta";
}

std::string_view to_string(FinishReason reason) noexcept {
  switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "stop";
}

void BackendBinding::validate() const {
  if (kind == BackendKind::openai_compat) {
    if (!base_url || base_url->empty()) {
      throw Error(ErrorCode::invalid_binding, "openai_compat binding requires base_url");
    }
    if (per_token_latency || seed || hallucination_period || failure_after_tokens) {
      throw Error(ErrorCode::invalid_binding,
                  "per_token_latency, seed, hallucination_period and failure_after_tokens "
                  "are only valid for mock bindings");
    }
  } else {
    if (base_url) throw Error(ErrorCode::invalid_binding, "mock binding must not set base_url");
    if (hallucination_period && *hallucination_period < 2) {
      throw Error(ErrorCode::invalid_binding, "hallucination_period must be >= 2");
    }
    if (failure_after_tokens && *failure_after_tokens < 0) {
      throw Error(ErrorCode::invalid_binding, "failure_after_tokens must be >= 0");
    }
    if (per_token_latency && per_token_latency->count() < 0) {
      throw Error(ErrorCode::invalid_binding, "per_token_latency must be >= 0");
    }
  }
  if (request_timeout.count() <= 0) {
    throw Error(ErrorCode::invalid_binding, "request_timeout must be positive");
  }
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw Error(ErrorCode::invalid_binding,
                "bad value for '" + std::string(key) + "': " + std::string(value));
  }
  return out;
}

template <typename Fn>
void for_each_query_param(std::string_view query, Fn&& fn) {
  while (!query.empty()) {
    const auto amp = query.find('&');
    const auto pair = query.substr(0, amp);
    if (!pair.empty()) {
      const auto eq = pair.find('=');
      if (eq == std::string_view::npos) {
        throw Error(ErrorCode::invalid_binding, "query parameter without value: " + std::string(pair));
      }
      fn(pair.substr(0, eq), pair.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    query.remove_prefix(amp + 1);
  }
}

}  // namespace

BackendBinding BackendBinding::from_url(std::string_view url) {
  BackendBinding binding;
  std::string_view query;
  if (const auto q = url.find('?'); q != std::string_view::npos) {
    query = url.substr(q + 1);
    url = url.substr(0, q);
  }
  if (url.starts_with("mock:")) {
    binding.kind = BackendKind::mock;
    for_each_query_param(query, [&](std::string_view key, std::string_view value) {
      if (key == "seed") {
        binding.seed = parse_number<std::uint64_t>(key, value);
      } else if (key == "latency_ms") {
        binding.per_token_latency = std::chrono::microseconds(
            static_cast<std::int64_t>(parse_number<double>(key, value) * 1000.0));
      } else if (key == "latency_us") {
        binding.per_token_latency = std::chrono::microseconds(parse_number<std::int64_t>(key, value));
      } else if (key == "hallucination_period") {
        binding.hallucination_period = parse_number<int>(key, value);
      } else if (key == "failure_after") {
        binding.failure_after_tokens = parse_number<int>(key, value);
      } else if (key == "timeout_ms") {
        binding.request_timeout = std::chrono::milliseconds(parse_number<std::int64_t>(key, value));
      } else {
        throw Error(ErrorCode::invalid_binding, "unknown mock parameter '" + std::string(key) + "'");
      }
    });
  } else if (url.starts_with("http://") || url.starts_with("https://")) {
    binding.kind = BackendKind::openai_compat;
    std::string base(url);
    while (base.size() > 1 && base.back() == '/') base.pop_back();
    binding.base_url = base;
    for_each_query_param(query, [&](std::string_view key, std::string_view value) {
      if (key == "timeout_ms") {
        binding.request_timeout = std::chrono::milliseconds(parse_number<std::int64_t>(key, value));
      } else {
        throw Error(ErrorCode::invalid_binding, "unknown backend parameter '" + std::string(key) + "'");
      }
    });
  } else {
    throw Error(ErrorCode::invalid_binding, "unsupported backend url: " + std::string(url));
  }
  binding.validate();
  return binding;
}

void GenerationParams::validate() const {
  if (max_tokens < 0) throw Error(ErrorCode::invalid_params, "max_tokens must be >= 0");
  if (!(temperature >= 0.0)) throw Error(ErrorCode::invalid_params, "temperature must be >= 0");
}

void EventEmitter::emit(TokenEvent event) {
  event.model_id = model_id_;
  event.seq = seq_++;
  event.emitted_at = std::chrono::steady_clock::now();
  sink_(event);
}

void EventEmitter::delta(std::string text) {
  if (finished_ || text.empty()) return;
  TokenEvent ev;
  ev.kind = TokenEventKind::delta;
  ev.text = std::move(text);
  emit(std::move(ev));
}

void EventEmitter::done(FinishReason reason) {
  if (finished_) return;
  finished_ = true;
  TokenEvent ev;
  ev.kind = TokenEventKind::done;
  ev.finish_reason = reason;
  emit(std::move(ev));
}

void EventEmitter::error(std::string message) {
  if (finished_) return;
  finished_ = true;
  TokenEvent ev;
  ev.kind = TokenEventKind::error;
  ev.finish_reason = FinishReason::error;
  ev.error_message = std::move(message);
  emit(std::move(ev));
}

std::vector<std::string> SseDecoder::feed(std::string_view bytes) {
  for (char c : bytes) {
    if (c != '\r') buffer_.push_back(c);
  }
  std::vector<std::string> payloads;
  std::size_t end;
  while ((end = buffer_.find("\n\n")) != std::string::npos) {
    std::string_view block(buffer_.data(), end);
    std::string data;
    bool has_data = false;
    while (!block.empty()) {
      const auto nl = block.find('\n');
      auto line = block.substr(0, nl);
      if (line.starts_with("data:")) {
        line.remove_prefix(5);
        if (line.starts_with(' ')) line.remove_prefix(1);
        if (has_data) data.push_back('\n');
        data.append(line);
        has_data = true;
      }
      if (nl == std::string_view::npos) break;
      block.remove_prefix(nl + 1);
    }
    if (has_data) payloads.push_back(std::move(data));
    buffer_.erase(0, end + 2);
  }
  return payloads;
}

bool SseDecoder::has_partial() const noexcept {
  return buffer_.find_first_not_of('\n') != std::string::npos;
}

void chat_completion(const BackendBinding& binding, const Prompt& prompt,
                     const GenerationParams& params, const StreamOptions& options,
                     const TokenSink& sink) {
  if (binding.kind == BackendKind::mock) {
    mock_generate(binding, prompt, params, options, sink);
  } else {
    openai_chat_completion(binding, prompt, params, options, sink);
  }
}

std::vector<TokenEvent> collect(const BackendBinding& binding, const Prompt& prompt,
                                const GenerationParams& params, const StreamOptions& options) {
  std::vector<TokenEvent> events;
  chat_completion(binding, prompt, params, options,
                  [&](const TokenEvent& ev) { events.push_back(ev); });
  return events;
}

std::string delta_text(const std::vector<TokenEvent>& events) {
  std::string out;
  for (const auto& ev : events) {
    if (ev.kind == TokenEventKind::delta) out += ev.text;
  }
  return out;
}

}  // namespace llmgate
