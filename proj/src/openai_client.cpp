#include <httplib.h>

#include <json.hpp>

#include "llmgate/backend.hpp"

namespace llmgate {

namespace {

using json = nlohmann::json;

constexpr std::size_t kMaxErrorBody = 64 * 1024;

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // base path without trailing slash, e.g. /v1
};

Endpoint split_base_url(const std::string& url) {
  Endpoint ep;
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) {
    ep.origin = url;
  } else {
    ep.origin = url.substr(0, path_start);
    ep.path = url.substr(path_start);
    while (!ep.path.empty() && ep.path.back() == '/') ep.path.pop_back();
  }
  return ep;
}

std::string error_message_from_body(const std::string& body) {
  auto parsed = json::parse(body, nullptr, false);
  if (!parsed.is_discarded() && parsed.is_object() && parsed.contains("error")) {
    const auto& err = parsed["error"];
    if (err.is_object() && err.contains("message") && err["message"].is_string()) {
      return err["message"].get<std::string>();
    }
    if (err.is_string()) return err.get<std::string>();
  }
  return body.substr(0, 256);
}

FinishReason finish_from_string(const std::string& reason) {
  return reason == "length" ? FinishReason::length : FinishReason::stop;
}

}  // namespace

void openai_chat_completion(const BackendBinding& binding, const Prompt& prompt,
                            const GenerationParams& params, const StreamOptions& options,
                            const TokenSink& sink) {
  EventEmitter out(options.model_id, sink);
  if (binding.kind != BackendKind::openai_compat || !binding.base_url) {
    out.error("invalid binding: openai_compat binding with base_url required");
    return;
  }
  const auto endpoint = split_base_url(*binding.base_url);
  const auto started = std::chrono::steady_clock::now();
  const auto deadline = started + binding.request_timeout;

  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(binding.request_timeout);
  client.set_read_timeout(binding.request_timeout);
  client.set_write_timeout(binding.request_timeout);
  client.set_keep_alive(false);
  std::stop_callback on_cancel(options.stop, [&client] { client.stop(); });

  json body;
  body["model"] = options.remote_model.empty() ? options.model_id : options.remote_model;
  body["messages"] = json::array();
  for (const auto& m : prompt.messages) {
    body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  if (prompt.messages.empty()) {
    body["messages"].push_back({{"role", "user"}, {"content", prompt.text}});
  }
  body["max_tokens"] = params.max_tokens;
  body["temperature"] = params.temperature;
  if (!params.stop.empty()) body["stop"] = params.stop;
  body["stream"] = params.stream;

  httplib::Request req;
  req.method = "POST";
  req.path = endpoint.path + "/chat/completions";
  req.body = body.dump();
  req.set_header("Content-Type", "application/json");
  req.set_header("Accept", params.stream ? "text/event-stream" : "application/json");
  if (binding.auth_token) req.set_header("Authorization", "Bearer " + *binding.auth_token);

  SseDecoder decoder;
  StopMatcher matcher(params.stop);
  int status = 0;
  bool streaming = false;
  bool saw_done_marker = false;
  bool stopped = false;
  std::optional<FinishReason> finish;
  std::string failure;
  std::string raw_body;

  req.response_handler = [&](const httplib::Response& res) {
    status = res.status;
    streaming = res.get_header_value("Content-Type").find("text/event-stream") != std::string::npos;
    return !options.stop.stop_requested();
  };
  req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
    if (options.stop.stop_requested()) return false;
    if (std::chrono::steady_clock::now() > deadline) {
      failure = "timeout after " + std::to_string(binding.request_timeout.count()) + "ms";
      return false;
    }
    if (status != 200 || !streaming) {
      if (raw_body.size() + len > 16 * kMaxErrorBody) {
        failure = "malformed-backend-response: response body too large";
        return false;
      }
      raw_body.append(data, len);
      return true;
    }
    if (saw_done_marker) return true;
    for (auto& payload : decoder.feed(std::string_view(data, len))) {
      if (payload == "[DONE]") {
        saw_done_marker = true;
        return true;
      }
      auto frame = json::parse(payload, nullptr, false);
      if (frame.is_discarded() || !frame.is_object()) {
        failure = "malformed-backend-response: frame is not a JSON object";
        return false;
      }
      if (frame.contains("error")) {
        failure = "backend error: " + error_message_from_body(payload);
        return false;
      }
      if (!frame.contains("choices") || !frame["choices"].is_array()) {
        failure = "malformed-backend-response: frame without choices";
        return false;
      }
      if (frame["choices"].empty()) continue;  // e.g. trailing usage frame
      const auto& choice = frame["choices"][0];
      if (choice.contains("delta") && choice["delta"].is_object()) {
        const auto& delta = choice["delta"];
        if (delta.contains("content") && delta["content"].is_string()) {
          auto step = matcher.feed(delta["content"].get<std::string>());
          out.delta(std::move(step.emit));
          if (step.stopped) {
            stopped = true;
            return false;
          }
        }
      } else {
        failure = "malformed-backend-response: choice without delta";
        return false;
      }
      if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
        finish = finish_from_string(choice["finish_reason"].get<std::string>());
      }
    }
    return true;
  };

  httplib::Response res;
  httplib::Error err = httplib::Error::Success;
  const bool ok = client.send(req, res, err);
  const auto elapsed = std::chrono::steady_clock::now() - started;

  if (options.stop.stop_requested()) {
    out.error("cancelled");
    return;
  }
  if (!failure.empty()) {
    out.error(failure);
    return;
  }
  if (stopped) {
    out.done(FinishReason::stop);
    return;
  }
  if (saw_done_marker) {
    out.delta(matcher.flush());
    out.done(finish.value_or(FinishReason::stop));
    return;
  }
  if (!ok) {
    const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                           elapsed >= binding.request_timeout;
    if (timed_out) {
      out.error("timeout after " + std::to_string(binding.request_timeout.count()) + "ms (" +
                httplib::to_string(err) + ")");
    } else {
      out.error("connect-failure: " + httplib::to_string(err));
    }
    return;
  }
  if (status != 200) {
    out.error("backend returned HTTP " + std::to_string(status) + ": " + error_message_from_body(raw_body));
    return;
  }
  if (!streaming) {
    auto parsed = json::parse(raw_body, nullptr, false);
    try {
      const auto& choice = parsed.at("choices").at(0);
      const auto content = choice.at("message").at("content").get<std::string>();
      auto step = matcher.feed(content);
      out.delta(std::move(step.emit));
      if (step.stopped) {
        out.done(FinishReason::stop);
        return;
      }
      out.delta(matcher.flush());
      const auto reason = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                              ? finish_from_string(choice["finish_reason"].get<std::string>())
                              : FinishReason::stop;
      out.done(reason);
    } catch (const json::exception&) {
      out.error("malformed-backend-response: unexpected completion body");
    }
    return;
  }
  out.error(decoder.has_partial() ? "malformed-backend-response: truncated event stream"
                                  : "malformed-backend-response: stream ended without [DONE]");
}

}  // namespace llmgate
