#include "llmgate/gateway.hpp"

#include <atomic>
#include <condition_variable>
#include <map>
#include <mutex>
#include <stop_token>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "llmgate/arena.hpp"
#include "llmgate/evaluation.hpp"
#include "llmgate/ids.hpp"

namespace llmgate {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::string_view kDocumentSession = "documents";
constexpr std::size_t kDefaultK = 5;

std::string dump(const ojson& j) { return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace); }

std::string sse(const ojson& j) { return "data: " + dump(j) + "\n\n"; }

ApiError api(int status, std::string code, std::string message) {
  return ApiError{status, std::move(code), std::move(message)};
}

void send(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(dump(body), "application/json");
}

void send_error(httplib::Response& res, const ApiError& e) {
  res.status = e.http_status;
  res.set_content(e.body(), "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::invalid_request, "request body is not valid JSON");
  if (!j.is_object()) throw Error(ErrorCode::invalid_request, "request body must be a JSON object");
  return j;
}

std::string message_content(const nlohmann::json& content, std::size_t index) {
  if (content.is_string()) return content.get<std::string>();
  if (content.is_null()) return {};
  if (content.is_array()) {
    std::string text;
    for (const auto& part : content) {
      if (!part.is_object() || part.value("type", "") != "text" || !part.contains("text") || !part["text"].is_string()) {
        throw Error(ErrorCode::invalid_request, "messages[" + std::to_string(index) + "].content: only text parts are supported");
      }
      text += part["text"].get<std::string>();
    }
    return text;
  }
  throw Error(ErrorCode::invalid_request, "messages[" + std::to_string(index) + "].content must be a string");
}

Conversation parse_messages(const nlohmann::json& body) {
  const auto it = body.find("messages");
  if (it == body.end() || !it->is_array()) throw Error(ErrorCode::invalid_request, "'messages' must be an array");
  Conversation conv;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& m = (*it)[i];
    if (!m.is_object()) throw Error(ErrorCode::invalid_request, "messages[" + std::to_string(i) + "] must be an object");
    const auto role_it = m.find("role");
    if (role_it == m.end() || !role_it->is_string()) {
      throw Error(ErrorCode::invalid_request, "messages[" + std::to_string(i) + "].role must be a string");
    }
    auto role_name = role_it->get<std::string>();
    if (role_name == "developer") role_name = "system";
    const auto role = role_from_string(role_name);
    if (!role) throw Error(ErrorCode::invalid_request, "unsupported role '" + role_name + "'");
    conv.messages.push_back({*role, message_content(m.value("content", nlohmann::json()), i)});
  }
  conv.validate();
  return conv;
}

GenerationParams parse_params(const nlohmann::json& body) {
  GenerationParams p;
  p.stream = false;
  for (const char* key : {"max_tokens", "max_completion_tokens"}) {
    const auto it = body.find(key);
    if (it == body.end() || it->is_null()) continue;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0 || it->get<std::int64_t>() > 1'000'000) {
      throw Error(ErrorCode::invalid_request, std::string("'") + key + "' must be a non-negative integer");
    }
    p.max_tokens = it->get<int>();
  }
  if (const auto it = body.find("temperature"); it != body.end() && !it->is_null()) {
    if (!it->is_number()) throw Error(ErrorCode::invalid_request, "'temperature' must be a number");
    p.temperature = it->get<double>();
  }
  if (const auto it = body.find("stop"); it != body.end() && !it->is_null()) {
    if (it->is_string()) {
      p.stop.push_back(it->get<std::string>());
    } else if (it->is_array()) {
      for (const auto& s : *it) {
        if (!s.is_string()) throw Error(ErrorCode::invalid_request, "'stop' entries must be strings");
        p.stop.push_back(s.get<std::string>());
      }
    } else {
      throw Error(ErrorCode::invalid_request, "'stop' must be a string or an array of strings");
    }
  }
  if (const auto it = body.find("stream"); it != body.end() && !it->is_null()) {
    if (!it->is_boolean()) throw Error(ErrorCode::invalid_request, "'stream' must be a boolean");
    p.stream = it->get<bool>();
  }
  if (const auto it = body.find("n"); it != body.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<int>() != 1) throw Error(ErrorCode::invalid_request, "only n = 1 is supported");
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_request, e.what());
  }
  return p;
}

std::string string_field(const nlohmann::json& body, const char* key, std::string fallback = {}) {
  const auto it = body.find(key);
  if (it == body.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw Error(ErrorCode::invalid_request, std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

std::vector<std::string> string_list(const nlohmann::json& body, const char* key) {
  std::vector<std::string> out;
  const auto it = body.find(key);
  if (it == body.end() || it->is_null()) return out;
  if (!it->is_array()) throw Error(ErrorCode::invalid_request, std::string("'") + key + "' must be an array of strings");
  for (const auto& v : *it) {
    if (!v.is_string()) throw Error(ErrorCode::invalid_request, std::string("'") + key + "' must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::size_t k_field(const nlohmann::json& body, std::size_t fallback) {
  const auto it = body.find("k");
  if (it == body.end() || it->is_null()) return fallback;
  if (!it->is_number_integer() || it->get<std::int64_t>() < 0 || it->get<std::int64_t>() > 10'000) {
    throw Error(ErrorCode::invalid_request, "'k' must be an integer between 0 and 10000");
  }
  return it->get<std::size_t>();
}

ojson conversation_json(const Conversation& conv) {
  ojson out = ojson::array();
  for (const auto& m : conv.messages) out.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return out;
}

}  // namespace

std::string ApiError::body() const {
  ojson j = {{"error", {{"code", code}, {"message", message}}}};
  return dump(j);
}

ApiError ApiError::from(const Error& e) {
  switch (e.code()) {
    case ErrorCode::unknown_model: return api(404, "model_not_found", e.what());
    case ErrorCode::unknown_fanout:
    case ErrorCode::unknown_document:
    case ErrorCode::unknown_session:
    case ErrorCode::unknown_scorer: return api(404, "not_found", e.what());
    case ErrorCode::unsupported_format: return api(415, "unsupported_media_type", e.what());
    case ErrorCode::remote_scorer_unreachable: return api(502, "backend_unavailable", e.what());
    case ErrorCode::storage_failure:
    case ErrorCode::session_locked:
    case ErrorCode::corrupt_log:
    case ErrorCode::bad_config:
    case ErrorCode::duplicate_name:
    case ErrorCode::duplicate_id:
    case ErrorCode::unknown_template:
    case ErrorCode::unknown_backend:
    case ErrorCode::invalid_descriptor:
    case ErrorCode::invalid_template:
    case ErrorCode::invalid_binding:
    case ErrorCode::non_mock_binding: return api(500, "internal", e.what());
    default: return api(400, "invalid_request", e.what());
  }
}

// ---------------------------------------------------------------------------

struct Gateway::Impl {
  GatewayConfig config;
  std::shared_ptr<ModelRegistry> registry;
  std::shared_ptr<IdSource> ids;
  decltype(FanoutOptions::backend) backend;
  SessionStore store;
  DocumentLibrary library;
  FixturePdfExtractor pdf;
  HeuristicScorer scorer;
  std::unique_ptr<FanoutOrchestrator> orchestrator;
  httplib::Server server;
  std::thread server_thread;
  int bound_port = -1;

  std::mutex streams_mutex;
  std::condition_variable streams_cv;
  std::size_t active_streams = 0;
  std::map<std::uint64_t, std::stop_source> chat_streams;
  std::uint64_t next_chat = 1;
  std::atomic<bool> stopping{false};
  std::once_flag stop_once;

  Impl(GatewayConfig cfg, std::shared_ptr<ModelRegistry> reg, GatewayHooks hooks)
      : config(std::move(cfg)),
        registry(std::move(reg)),
        ids(config.deterministic_seed ? std::make_shared<IdSource>(*config.deterministic_seed, config.fixed_created)
                                      : std::make_shared<IdSource>()),
        backend(hooks.backend ? hooks.backend : decltype(backend)(chat_completion)),
        store(SessionStoreOptions{config.data_dir, config.sync_writes, hooks.write_hook}),
        library(LibraryOptions{config.chunk_tokens, config.chunk_overlap, 4}) {
    FanoutOptions fo;
    fo.max_width = config.max_fanout_width;
    fo.backend = backend;
    orchestrator = std::make_unique<FanoutOrchestrator>(*registry, std::move(fo), ids);
    restore_documents();
    routes();
  }

  void restore_documents() {
    const std::string session(kDocumentSession);
    if (!store.has_session(session)) return;
    std::size_t restored = 0;
    for (const auto& ev : store.replay(session)) {
      if (ev.kind != EventKind::document_ingested) continue;
      try {
        Document d;
        d.doc_id = ev.payload.at("doc_id").get<std::string>();
        d.source_name = ev.payload.value("source_name", "");
        d.format = format_from_string(ev.payload.value("format", "text"));
        d.body = ev.payload.at("body").get<std::string>();
        d.ingested_at_ms = ev.payload.value("ingested_at", std::int64_t{0});
        library.add(std::move(d));
        ++restored;
      } catch (const std::exception& e) {
        spdlog::warn("skipping unreadable document record at offset {}: {}", ev.offset, e.what());
      }
    }
    if (restored > 0) spdlog::info("restored {} document(s)", restored);
  }

  ModelDescriptor model_by_name(const std::string& name) const {
    if (auto d = registry->find_by_name(name)) return *d;
    if (auto d = registry->find(ModelId{name})) return *d;
    throw Error(ErrorCode::unknown_model, "model '" + name + "' is not registered");
  }

  std::string session_of(const httplib::Request& req, const nlohmann::json* body) const {
    std::string session = config.default_session;
    if (req.has_param("session_id")) session = req.get_param_value("session_id");
    if (body != nullptr) session = string_field(*body, "session_id", session);
    if (!SessionStore::valid_session_id(session) || session == kDocumentSession) {
      throw Error(ErrorCode::invalid_request, "invalid session id '" + session + "'");
    }
    return session;
  }

  void stream_opened() {
    std::lock_guard lock(streams_mutex);
    ++active_streams;
  }

  void stream_closed() {
    std::lock_guard lock(streams_mutex);
    --active_streams;
    streams_cv.notify_all();
  }

  void log_event(const std::string& session, EventKind kind, nlohmann::json payload) {
    try {
      store.append_event(session, kind, std::move(payload));
    } catch (const Error& e) {
      spdlog::error("session '{}': dropping {} record: {}", session, to_string(kind), e.what());
    }
  }

  template <typename Fn>
  void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      send_error(res, ApiError::from(e));
    } catch (const std::exception& e) {
      spdlog::error("unhandled error: {}", e.what());
      send_error(res, api(500, "internal", e.what()));
    }
  }

  bool body_too_large(const httplib::Request& req, httplib::Response& res) const {
    if (req.body.size() <= config.max_body_bytes) return false;
    send_error(res, api(413, "payload_too_large",
                        "request body exceeds " + std::to_string(config.max_body_bytes) + " bytes"));
    return true;
  }

  // -------------------------------------------------------------------------

  void routes() {
    server.new_task_queue = [n = config.worker_threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
    server.set_payload_max_length(std::max(config.max_body_bytes, config.max_upload_bytes));
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    // httplib also sets SO_REUSEPORT, which lets a second gateway share a busy port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });

    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (req.method == "OPTIONS") {
        res.status = 204;
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
        return httplib::Server::HandlerResponse::Handled;
      }
      if (!config.auth_token || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") != "Bearer " + *config.auth_token) {
        send_error(res, api(401, "unauthorized", "missing or invalid bearer token"));
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });

    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 404) {
        send_error(res, api(404, "not_found", "no route for " + req.method + " " + req.path));
      } else if (res.status == 413) {
        send_error(res, api(413, "payload_too_large", "request body too large"));
      } else if (res.status >= 500) {
        send_error(res, api(res.status, "internal", httplib::status_message(res.status)));
      } else {
        send_error(res, api(res.status, "invalid_request", httplib::status_message(res.status)));
      }
    });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "unexpected failure";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send_error(res, api(500, "internal", what));
    });

    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      send(res, 200, {{"status", stopping ? "stopping" : "ok"}, {"models", registry->size()}});
    });

    server.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
      ojson data = ojson::array();
      for (const auto& d : registry->models()) {
        data.push_back({{"id", d.name},
                        {"object", "model"},
                        {"created", 0},
                        {"owned_by", to_string(d.family)},
                        {"family", to_string(d.family)},
                        {"size", d.size_label()},
                        {"context_window", d.context_window}});
      }
      send(res, 200, {{"object", "list"}, {"data", data}});
    });

    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      if (body_too_large(req, res)) return;
      guarded(res, [&] { chat_completion_route(req, res); });
    });

    server.Post("/arena/fanout", [this](const httplib::Request& req, httplib::Response& res) {
      if (body_too_large(req, res)) return;
      guarded(res, [&] { fanout_route(req, res); });
    });

    server.Post("/arena/cancel/:id", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto& id = req.path_params.at("id");
        const auto outcome = orchestrator->cancel(id);
        send(res, 202, {{"fanout_id", id},
                        {"status", outcome == CancelOutcome::cancelled ? "cancelled" : "already_finished"}});
      });
    });

    server.Post("/arena/vote", [this](const httplib::Request& req, httplib::Response& res) {
      if (body_too_large(req, res)) return;
      guarded(res, [&] {
        const auto body = parse_body(req);
        const auto session = session_of(req, &body);
        auto result = record_vote(store, session, vote_from_json(body), *ids);
        send(res, 200, {{"status", result.duplicate ? "duplicate" : "recorded"},
                        {"vote", ojson(llmgate::to_json(result.vote))}});
      });
    });

    server.Get("/arena/leaderboard", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        ojson out = ojson::array();
        for (const auto& e : session_leaderboard(store, session_of(req, nullptr))) {
          out.push_back({{"model", e.model_id},
                         {"elo", e.elo},
                         {"wins", e.wins},
                         {"losses", e.losses},
                         {"ties", e.ties},
                         {"games", e.games},
                         {"win_rate", e.win_rate ? ojson(*e.win_rate) : ojson(nullptr)}});
        }
        send(res, 200, out);
      });
    });

    server.Post("/documents", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { upload_route(req, res); });
    });

    server.Get("/documents", [this](const httplib::Request&, httplib::Response& res) {
      ojson out = ojson::array();
      for (const auto& info : library.list()) out.push_back(ojson(llmgate::to_json(info)));
      send(res, 200, out);
    });

    server.Post("/documents/query", [this](const httplib::Request& req, httplib::Response& res) {
      if (body_too_large(req, res)) return;
      guarded(res, [&] {
        const auto body = parse_body(req);
        const auto query = string_field(body, "query");
        const auto doc_ids = string_list(body, "doc_ids");
        const auto k = k_field(body, kDefaultK);
        const auto index = library.index(doc_ids);
        ojson out = ojson::array();
        for (const auto& hit : index->retrieve(query, k)) {
          const Chunk* c = index->find_chunk(hit.chunk_id);
          out.push_back({{"chunk_id", hit.chunk_id},
                         {"doc_id", hit.doc_id},
                         {"ordinal", hit.ordinal},
                         {"score", hit.score},
                         {"text", c != nullptr ? c->text : std::string()}});
        }
        send(res, 200, out);
      });
    });
  }

  // -------------------------------------------------------------------------

  void chat_completion_route(const httplib::Request& req, httplib::Response& res) {
    if (stopping) {
      send_error(res, api(503, "backend_unavailable", "gateway is shutting down"));
      return;
    }
    const auto body = parse_body(req);
    const auto name_it = body.find("model");
    if (name_it == body.end() || !name_it->is_string()) throw Error(ErrorCode::invalid_request, "'model' must be a string");
    const auto descriptor = model_by_name(name_it->get<std::string>());
    const auto conversation = parse_messages(body);
    auto params = parse_params(body);

    const auto model = registry->resolve(descriptor.id);
    const auto prompt = registry->render_prompt(descriptor.id, conversation);
    const auto prompt_tokens = registry->estimate_tokens(descriptor.id, prompt.text);
    if (prompt_tokens + static_cast<std::size_t>(params.max_tokens) > static_cast<std::size_t>(descriptor.context_window)) {
      send_error(res, api(400, "context_overflow",
                          "prompt needs " + std::to_string(prompt_tokens) + " tokens plus " +
                              std::to_string(params.max_tokens) + " output tokens; the context window of '" +
                              descriptor.name + "' is " + std::to_string(descriptor.context_window)));
      return;
    }
    for (const auto& s : model.prompt_template.stop_sequences) {
      if (std::find(params.stop.begin(), params.stop.end(), s) == params.stop.end()) params.stop.push_back(s);
    }

    const std::string id = ids->next("chatcmpl-");
    const std::int64_t created = ids->created();

    std::uint64_t token;
    std::stop_source stop;
    {
      std::lock_guard lock(streams_mutex);
      token = next_chat++;
      chat_streams.emplace(token, stop);
    }
    const auto release = [this, token] {
      std::lock_guard lock(streams_mutex);
      chat_streams.erase(token);
    };
    const StreamOptions options{descriptor.id.value, descriptor.served_name, stop.get_token()};

    if (!params.stream) {
      std::string text;
      std::optional<TokenEvent> terminal;
      try {
        backend(model.backend, prompt, params, options, [&](const TokenEvent& ev) {
          if (ev.kind == TokenEventKind::delta) text += ev.text;
          else if (!terminal) terminal = ev;
        });
      } catch (...) {
        release();
        throw;
      }
      release();
      if (!terminal || terminal->kind == TokenEventKind::error) {
        send_error(res, api(502, "backend_unavailable",
                            terminal ? terminal->error_message : "backend ended without a terminal event"));
        return;
      }
      const auto completion_tokens = registry->estimate_tokens(descriptor.id, text);
      ojson out = {
          {"id", id},
          {"object", "chat.completion"},
          {"created", created},
          {"model", descriptor.name},
          {"choices", ojson::array({{{"index", 0},
                                     {"message", {{"role", "assistant"}, {"content", text}}},
                                     {"finish_reason", to_string(terminal->finish_reason)}}})},
          {"usage",
           {{"prompt_tokens", prompt_tokens},
            {"completion_tokens", completion_tokens},
            {"total_tokens", prompt_tokens + completion_tokens}}}};
      send(res, 200, out);
      return;
    }

    stream_opened();
    auto finished = std::make_shared<bool>(false);
    const std::string name = descriptor.name;
    const auto chunk = [id, created, name](ojson delta, ojson finish) {
      return ojson{{"id", id},
                   {"object", "chat.completion.chunk"},
                   {"created", created},
                   {"model", name},
                   {"choices", ojson::array({{{"index", 0}, {"delta", std::move(delta)}, {"finish_reason", std::move(finish)}}})}};
    };
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, model, prompt, params, options, stop, chunk, finished](std::size_t, httplib::DataSink& sink) mutable {
          bool open = true;
          const auto write = [&](const std::string& frame) {
            if (open && !sink.write(frame.data(), frame.size())) {
              open = false;
              stop.request_stop();
            }
          };
          write(sse(chunk({{"role", "assistant"}, {"content", ""}}, nullptr)));
          bool terminal = false;
          try {
            backend(model.backend, prompt, params, options, [&](const TokenEvent& ev) {
              if (terminal) return;
              switch (ev.kind) {
                case TokenEventKind::delta:
                  write(sse(chunk({{"content", ev.text}}, nullptr)));
                  break;
                case TokenEventKind::done:
                  terminal = true;
                  write(sse(chunk(ojson::object(), to_string(ev.finish_reason))));
                  break;
                case TokenEventKind::error:
                  terminal = true;
                  write(sse({{"error", {{"code", "backend_unavailable"}, {"message", ev.error_message}}}}));
                  break;
              }
            });
          } catch (const std::exception& e) {
            if (!terminal) write(sse({{"error", {{"code", "internal"}, {"message", e.what()}}}}));
            terminal = true;
          }
          if (!terminal) write(sse({{"error", {{"code", "backend_unavailable"}, {"message", "backend ended without a terminal event"}}}}));
          write("data: [DONE]\n\n");
          if (open) sink.done();
          *finished = true;
          return open;
        },
        [this, release, stop, finished](bool) mutable {
          if (!*finished) stop.request_stop();
          release();
          stream_closed();
        });
  }

  // -------------------------------------------------------------------------

  struct FanoutJob {
    Impl* gw = nullptr;
    FanoutStream stream;
    std::string session;
    std::optional<PackedContext> context;
    std::string query;
    std::map<std::string, std::string> names;  // model id -> display name
    std::map<std::string, std::string> texts;
    std::map<std::string, std::uint64_t> deltas;
    std::string prompt;
    bool complete = false;
    bool client_gone = false;

    explicit FanoutJob(FanoutStream s) : stream(std::move(s)) {}

    const std::string& id() const { return stream.fanout_id(); }

    std::string name_of(const std::string& model_id) const {
      const auto it = names.find(model_id);
      return it == names.end() ? model_id : it->second;
    }

    void write(httplib::DataSink* sink, const ojson& frame) {
      if (sink == nullptr || client_gone) return;
      const auto text = sse(frame);
      if (!sink->write(text.data(), text.size())) {
        client_gone = true;
        try {
          gw->orchestrator->cancel(id());
        } catch (const Error&) {
        }
      }
    }

    void record_terminal(const TokenEvent& ev) {
      const auto model = name_of(ev.model_id);
      nlohmann::json payload = {{"fanout_id", id()},
                                {"model", model},
                                {"kind", to_string(ev.kind)},
                                {"seq", ev.seq},
                                {"deltas", deltas[ev.model_id]},
                                {"text", texts[ev.model_id]}};
      if (ev.kind == TokenEventKind::done) payload["finish_reason"] = to_string(ev.finish_reason);
      else payload["error_message"] = ev.error_message;
      gw->log_event(session, EventKind::generation_terminal, std::move(payload));

      ScoreRequest sr;
      sr.model_id = model;
      sr.fanout_id = id();
      sr.prompt = prompt;
      sr.context = context ? &*context : nullptr;
      sr.response = texts[ev.model_id];
      const auto score = gw->scorer.score(sr);
      nlohmann::json components = nlohmann::json::object();
      for (const auto& [k, v] : score.components) components[k] = v;
      gw->log_event(session, EventKind::score_recorded,
                    {{"fanout_id", id()}, {"model", model}, {"scorer", score.scorer_id}, {"value", score.value},
                     {"components", components}});
    }

    void drain(httplib::DataSink* sink) {
      while (!complete) {
        auto ev = stream.next();
        if (!ev) break;
        if (ev->is_complete()) {
          complete = true;
          gw->log_event(session, EventKind::fanout_complete, {{"fanout_id", id()}, {"merge_seq", ev->merge_seq}});
          write(sink, {{"type", "fanout-complete"}, {"fanout_id", id()}, {"merge_seq", ev->merge_seq}});
          break;
        }
        const auto& t = ev->inner;
        ojson frame = {{"type", "token"},
                       {"fanout_id", id()},
                       {"merge_seq", ev->merge_seq},
                       {"model", name_of(t.model_id)},
                       {"seq", t.seq},
                       {"kind", to_string(t.kind)}};
        switch (t.kind) {
          case TokenEventKind::delta:
            frame["text"] = t.text;
            texts[t.model_id] += t.text;
            ++deltas[t.model_id];
            if (gw->config.log_token_deltas) {
              gw->log_event(session, EventKind::token_delta,
                            {{"fanout_id", id()}, {"model", name_of(t.model_id)}, {"seq", t.seq}, {"text", t.text}});
            }
            break;
          case TokenEventKind::done:
            frame["finish_reason"] = to_string(t.finish_reason);
            record_terminal(t);
            break;
          case TokenEventKind::error:
            frame["error_message"] = t.error_message;
            record_terminal(t);
            break;
        }
        write(sink, frame);
      }
    }
  };

  void fanout_route(const httplib::Request& req, httplib::Response& res) {
    if (stopping) {
      send_error(res, api(503, "backend_unavailable", "gateway is shutting down"));
      return;
    }
    const auto body = parse_body(req);
    const auto session = session_of(req, &body);
    const auto model_names = string_list(body, "models");
    if (model_names.empty()) throw Error(ErrorCode::invalid_request, "'models' must name at least one model");

    Conversation conversation;
    if (body.contains("messages")) {
      conversation = parse_messages(body);
    } else {
      const auto prompt = string_field(body, "prompt");
      if (prompt.empty()) throw Error(ErrorCode::invalid_request, "either 'messages' or a non-empty 'prompt' is required");
      conversation.messages.push_back({Role::user, prompt});
    }
    auto params = parse_params(body);
    params.stream = true;

    FanoutRequest request;
    request.conversation = conversation;
    request.params = params;
    std::map<std::string, std::string> names;
    for (const auto& n : model_names) {
      const auto d = model_by_name(n);
      request.model_ids.push_back(d.id);
      names[d.id.value] = d.name;
    }

    std::string query;
    std::vector<std::string> doc_ids = string_list(body, "doc_ids");
    std::size_t k = k_field(body, kDefaultK);
    if (const auto it = body.find("document_query"); it != body.end() && !it->is_null()) {
      if (it->is_string()) {
        query = it->get<std::string>();
      } else if (it->is_object()) {
        query = string_field(*it, "query");
        if (it->contains("doc_ids")) doc_ids = string_list(*it, "doc_ids");
        k = k_field(*it, k);
      } else {
        throw Error(ErrorCode::invalid_request, "'document_query' must be a string or an object");
      }
    }
    if (!query.empty()) {
      request.context = ground(library, *registry, request.model_ids, conversation, query, k, params.max_tokens, doc_ids);
    }

    auto job = std::make_shared<FanoutJob>(orchestrator->fanout(request));
    job->gw = this;
    job->session = session;
    job->context = request.context;
    job->query = query;
    job->names = names;
    if (const auto* last = conversation.last_user_message()) job->prompt = last->content;

    nlohmann::json models_json = nlohmann::json::array();
    for (const auto& n : model_names) models_json.push_back(names[model_by_name(n).id.value]);
    try {
      store.append_event(session, EventKind::conversation_turn,
                         {{"role", "user"}, {"content", job->prompt}, {"fanout_id", job->id()}});
      nlohmann::json started = {{"fanout_id", job->id()},
                                {"models", models_json},
                                {"conversation", nlohmann::json(conversation_json(conversation))},
                                {"params", {{"max_tokens", params.max_tokens}, {"temperature", params.temperature}, {"stop", params.stop}}}};
      if (request.context) {
        started["context"] = {{"query", query}, {"chunk_ids", request.context->chunk_ids()}};
      }
      store.append_event(session, EventKind::fanout_started, std::move(started));
    } catch (const Error&) {
      orchestrator->cancel(job->id());
      job->drain(nullptr);
      throw;
    }

    stream_opened();
    auto finished = std::make_shared<bool>(false);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [job, models_json, finished](std::size_t, httplib::DataSink& sink) {
          job->write(&sink, {{"type", "fanout-started"},
                             {"fanout_id", job->id()},
                             {"session_id", job->session},
                             {"models", ojson(models_json)}});
          if (job->context) {
            ojson chunks = ojson::array();
            for (const auto& e : job->context->entries) {
              chunks.push_back({{"chunk_id", e.chunk_id},
                                {"doc_id", e.doc_id},
                                {"ordinal", e.ordinal},
                                {"score", e.score},
                                {"token_estimate", e.token_estimate}});
            }
            job->write(&sink, {{"type", "context"},
                               {"fanout_id", job->id()},
                               {"query", job->query},
                               {"chunk_ids", job->context->chunk_ids()},
                               {"chunks", chunks},
                               {"total_token_estimate", job->context->total_token_estimate},
                               {"budget_used_of", job->context->budget_used_of}});
          }
          job->drain(&sink);
          if (!job->client_gone) sink.done();
          *finished = true;
          return !job->client_gone;
        },
        [this, job, finished](bool) {
          if (!*finished) {
            try {
              orchestrator->cancel(job->id());
            } catch (const Error&) {
            }
            job->drain(nullptr);
          }
          stream_closed();
        });
  }

  // -------------------------------------------------------------------------

  void upload_route(const httplib::Request& req, httplib::Response& res) {
    if (stopping) {
      send_error(res, api(503, "backend_unavailable", "gateway is shutting down"));
      return;
    }
    std::string name;
    std::string bytes;
    std::string format_name = req.get_param_value("format");
    std::string content_type;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) throw Error(ErrorCode::invalid_request, "multipart upload needs a 'file' part");
      const auto file = req.get_file_value("file");
      name = file.filename;
      bytes = file.content;
      content_type = file.content_type;
      if (format_name.empty() && req.has_file("format")) format_name = req.get_file_value("format").content;
    } else {
      name = req.get_param_value("name");
      bytes = req.body;
      content_type = req.get_header_value("Content-Type");
    }
    if (name.empty()) name = "upload";
    if (bytes.size() > config.max_upload_bytes) {
      send_error(res, api(413, "payload_too_large", "upload exceeds " + std::to_string(config.max_upload_bytes) + " bytes"));
      return;
    }

    DocumentFormat format;
    if (!format_name.empty()) {
      format = format_from_string(format_name);
    } else if (std::filesystem::path(name).has_extension()) {
      format = format_from_extension(name);
    } else if (content_type.starts_with("text/markdown")) {
      format = DocumentFormat::markdown;
    } else if (content_type.starts_with("application/pdf")) {
      format = DocumentFormat::pdf_extracted;
    } else if (content_type.empty() || content_type.starts_with("text/plain")) {
      format = DocumentFormat::text;
    } else {
      throw Error(ErrorCode::unsupported_format, "unsupported content type '" + content_type + "'");
    }

    std::string doc_id = req.get_param_value("doc_id");
    if (doc_id.empty()) doc_id = ids->next("doc-");
    auto doc = ingest(bytes, format, doc_id, name, &pdf, ids->now_ms());
    // The documents session is created on first upload.
    store.create_session(std::string(kDocumentSession));
    store.append_event(std::string(kDocumentSession), EventKind::document_ingested,
                       nlohmann::json{{"doc_id", doc.doc_id},
                                      {"source_name", doc.source_name},
                                      {"format", to_string(doc.format)},
                                      {"ingested_at", doc.ingested_at_ms},
                                      {"body", doc.body}});
    const auto info = library.add(std::move(doc));
    send(res, 201, ojson(llmgate::to_json(info)));
  }
};

// ---------------------------------------------------------------------------

Gateway::Gateway(GatewayConfig config, std::shared_ptr<ModelRegistry> registry, GatewayHooks hooks) {
  if (!registry) throw Error(ErrorCode::bad_config, "gateway needs a model registry");
  impl_ = std::make_unique<Impl>(std::move(config), std::move(registry), std::move(hooks));
}

Gateway::~Gateway() { stop(); }

int Gateway::bind() {
  if (impl_->bound_port >= 0) return impl_->bound_port;
  auto& s = impl_->server;
  if (impl_->config.port == 0) {
    impl_->bound_port = s.bind_to_any_port(impl_->config.bind_address);
  } else {
    impl_->bound_port = s.bind_to_port(impl_->config.bind_address, impl_->config.port) ? impl_->config.port : -1;
  }
  return impl_->bound_port;
}

bool Gateway::serve() {
  if (bind() < 0) return false;
  spdlog::info("listening on {}:{}", impl_->config.bind_address, impl_->bound_port);
  return impl_->server.listen_after_bind();
}

int Gateway::start() {
  if (bind() < 0) return -1;
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->bound_port;
}

void Gateway::stop() {
  if (!impl_) return;
  std::call_once(impl_->stop_once, [this] {
    auto& g = *impl_;
    g.stopping = true;
    {
      std::lock_guard lock(g.streams_mutex);
      for (auto& [_, stop] : g.chat_streams) stop.request_stop();
    }
    for (const auto& id : g.orchestrator->live_fanouts()) {
      try {
        g.orchestrator->cancel(id);
      } catch (const Error&) {
      }
    }
    {
      std::unique_lock lock(g.streams_mutex);
      g.streams_cv.wait_for(lock, std::chrono::seconds(5), [&] { return g.active_streams == 0; });
    }
    g.server.stop();
    if (g.server_thread.joinable()) g.server_thread.join();
    g.orchestrator->shutdown();
  });
}

int Gateway::port() const noexcept { return impl_->bound_port; }
const GatewayConfig& Gateway::config() const noexcept { return impl_->config; }
ModelRegistry& Gateway::registry() { return *impl_->registry; }
FanoutOrchestrator& Gateway::orchestrator() { return *impl_->orchestrator; }
SessionStore& Gateway::store() { return impl_->store; }
DocumentLibrary& Gateway::library() { return impl_->library; }

}  // namespace llmgate
