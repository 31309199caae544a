#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "llmgate/error.hpp"
#include "llmgate/registry.hpp"

namespace llmgate {

namespace {

using json = nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::bad_config, where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) bad(where, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) bad(where + "." + key, "unknown key");
  }
}

std::string get_string(const json& obj, const std::string& where, const char* key, bool required) {
  if (!obj.contains(key)) {
    if (required) bad(where + "." + key, "missing");
    return {};
  }
  if (!obj[key].is_string()) bad(where + "." + key, "expected a string");
  return obj[key].get<std::string>();
}

std::optional<std::int64_t> get_int(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  if (!obj[key].is_number_integer()) bad(where + "." + key, "expected an integer");
  return obj[key].get<std::int64_t>();
}

BackendBinding parse_backend(const json& spec, const std::string& where) {
  if (spec.is_string()) {
    try {
      return BackendBinding::from_url(spec.get<std::string>());
    } catch (const Error& e) {
      bad(where, e.what());
    }
  }
  check_keys(spec, where,
             {"url", "kind", "base_url", "auth_token", "auth_token_env", "request_timeout_ms",
              "per_token_latency_ms", "seed", "hallucination_period", "failure_after_tokens"});
  BackendBinding b;
  if (spec.contains("url")) {
    try {
      b = BackendBinding::from_url(get_string(spec, where, "url", true));
    } catch (const Error& e) {
      bad(where + ".url", e.what());
    }
  } else {
    const auto kind = get_string(spec, where, "kind", true);
    if (kind == "mock") {
      b.kind = BackendKind::mock;
    } else if (kind == "openai_compat") {
      b.kind = BackendKind::openai_compat;
    } else {
      bad(where + ".kind", "expected 'mock' or 'openai_compat'");
    }
  }
  if (spec.contains("base_url")) b.base_url = get_string(spec, where, "base_url", true);
  if (spec.contains("auth_token")) b.auth_token = get_string(spec, where, "auth_token", true);
  if (spec.contains("auth_token_env")) {
    const auto var = get_string(spec, where, "auth_token_env", true);
    if (const char* value = std::getenv(var.c_str())) b.auth_token = value;
  }
  if (auto v = get_int(spec, where, "request_timeout_ms")) b.request_timeout = std::chrono::milliseconds(*v);
  if (spec.contains("per_token_latency_ms")) {
    if (!spec["per_token_latency_ms"].is_number()) bad(where + ".per_token_latency_ms", "expected a number");
    b.per_token_latency = std::chrono::microseconds(
        static_cast<std::int64_t>(spec["per_token_latency_ms"].get<double>() * 1000.0));
  }
  if (auto v = get_int(spec, where, "seed")) b.seed = static_cast<std::uint64_t>(*v);
  if (auto v = get_int(spec, where, "hallucination_period")) b.hallucination_period = static_cast<int>(*v);
  if (auto v = get_int(spec, where, "failure_after_tokens")) b.failure_after_tokens = static_cast<int>(*v);
  try {
    b.validate();
  } catch (const Error& e) {
    bad(where, e.what());
  }
  return b;
}

PromptTemplate parse_template(const json& spec, const std::string& where) {
  check_keys(spec, where,
             {"id", "system_prefix", "default_system", "turn_format", "role_tokens", "stop_sequences",
              "trailing_assistant_cue"});
  PromptTemplate t;
  t.id = get_string(spec, where, "id", true);
  t.system_prefix = get_string(spec, where, "system_prefix", false);
  t.default_system = get_string(spec, where, "default_system", false);
  t.turn_format = get_string(spec, where, "turn_format", true);
  t.trailing_assistant_cue = get_string(spec, where, "trailing_assistant_cue", false);
  if (!spec.contains("role_tokens") || !spec["role_tokens"].is_object()) {
    bad(where + ".role_tokens", "expected an object");
  }
  for (const auto& [role, token] : spec["role_tokens"].items()) {
    const auto r = role_from_string(role);
    if (!r) bad(where + ".role_tokens." + role, "unknown role");
    if (!token.is_string()) bad(where + ".role_tokens." + role, "expected a string");
    t.role_tokens[*r] = token.get<std::string>();
  }
  if (spec.contains("stop_sequences")) {
    if (!spec["stop_sequences"].is_array()) bad(where + ".stop_sequences", "expected an array");
    for (const auto& s : spec["stop_sequences"]) {
      if (!s.is_string()) bad(where + ".stop_sequences", "expected strings");
      t.stop_sequences.push_back(s.get<std::string>());
    }
  }
  try {
    t.validate(false);
  } catch (const Error& e) {
    bad(where, e.what());
  }
  return t;
}

}  // namespace

void load_catalogue(ModelRegistry& registry, std::string_view catalogue_json) {
  json doc;
  try {
    doc = json::parse(catalogue_json);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::bad_config, std::string("catalogue: invalid JSON: ") + e.what());
  }
  check_keys(doc, "catalogue", {"backends", "templates", "models"});

  if (doc.contains("templates")) {
    if (!doc["templates"].is_array()) bad("catalogue.templates", "expected an array");
    std::size_t i = 0;
    for (const auto& spec : doc["templates"]) {
      registry.register_template(parse_template(spec, "templates[" + std::to_string(i++) + "]"));
    }
  }
  if (doc.contains("backends")) {
    if (!doc["backends"].is_object()) bad("catalogue.backends", "expected an object");
    for (const auto& [name, spec] : doc["backends"].items()) {
      registry.register_backend(name, parse_backend(spec, "backends." + name));
    }
  }
  if (!doc.contains("models")) return;
  if (!doc["models"].is_array()) bad("catalogue.models", "expected an array");

  std::size_t i = 0;
  for (const auto& spec : doc["models"]) {
    const std::string where = "models[" + std::to_string(i++) + "]";
    check_keys(spec, where,
               {"id", "name", "family", "param_count_b", "context_window", "template", "backend",
                "token_divisor", "served_name"});
    ModelDescriptor d;
    d.id.value = get_string(spec, where, "id", false);
    d.name = get_string(spec, where, "name", true);
    d.served_name = get_string(spec, where, "served_name", false);

    const auto family = get_string(spec, where, "family", true);
    if (auto f = family_from_string(family)) {
      d.family = *f;
    } else {
      spdlog::warn("model '{}': unknown family '{}', using the generic instruct template", d.name, family);
      d.family = Family::generic;
    }
    d.template_id = get_string(spec, where, "template", false);
    if (d.template_id.empty()) d.template_id = std::string(to_string(d.family));

    if (spec.contains("param_count_b")) {
      const auto& p = spec["param_count_b"];
      if (p.is_number()) {
        d.param_count_b = p.get<double>();
      } else if (!(p.is_null() || (p.is_string() && p.get<std::string>() == "?"))) {
        bad(where + ".param_count_b", "expected a number, null or \"?\"");
      }
    }
    const auto window = get_int(spec, where, "context_window");
    if (!window) bad(where + ".context_window", "missing");
    d.context_window = static_cast<int>(*window);
    if (auto div = get_int(spec, where, "token_divisor")) d.token_divisor = static_cast<int>(*div);

    if (!spec.contains("backend")) bad(where + ".backend", "missing");
    if (spec["backend"].is_string() && registry.find_backend(spec["backend"].get<std::string>())) {
      d.backend_id = spec["backend"].get<std::string>();
    } else {
      // Inline URL or object: registered under a name derived from the model.
      d.backend_id = d.name + "@backend";
      registry.register_backend(d.backend_id, parse_backend(spec["backend"], where + ".backend"));
    }
    try {
      registry.register_model(std::move(d));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::bad_config) throw;
      bad(where, std::string(to_string(e.code())) + ": " + e.what());
    }
  }
}

void load_catalogue_file(ModelRegistry& registry, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::bad_config, "cannot read catalogue file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  load_catalogue(registry, buf.str());
}

std::string_view default_catalogue_json() noexcept {
  static constexpr std::string_view kCatalogue = R"json({
  "models": [
    {"name": "llama-2-7b-chat", "family": "llama2-chat", "param_count_b": 7, "context_window": 4096, "backend": "mock://?seed=1&latency_ms=4"},
    {"name": "llama-2-13b-chat", "family": "llama2-chat", "param_count_b": 13, "context_window": 4096, "backend": "mock://?seed=2&latency_ms=8"},
    {"name": "llama-2-70b-chat", "family": "llama2-chat", "param_count_b": 70, "context_window": 4096, "backend": "mock://?seed=3&latency_ms=20"},
    {"name": "codellama-34b-instruct", "family": "llama2-chat", "param_count_b": 34, "context_window": 16384, "backend": "mock://?seed=4&latency_ms=12"},
    {"name": "falcon-7b-instruct", "family": "falcon-instruct", "param_count_b": 7, "context_window": 2048, "backend": "mock://?seed=5&latency_ms=4&hallucination_period=9"},
    {"name": "falcon-40b-instruct", "family": "falcon-instruct", "param_count_b": 40, "context_window": 2048, "backend": "mock://?seed=6&latency_ms=12"},
    {"name": "falcon-180b-chat", "family": "falcon-instruct", "param_count_b": 180, "context_window": 2048, "backend": "mock://?seed=7&latency_ms=30"},
    {"name": "mistral-7b-instruct", "family": "llama2-chat", "param_count_b": 7, "context_window": 8192, "backend": "mock://?seed=8&latency_ms=4"},
    {"name": "gpt-neox-20b", "family": "gpt-neox", "param_count_b": 20, "context_window": 2048, "backend": "mock://?seed=9&latency_ms=10&hallucination_period=6"},
    {"name": "wizardlm-7b", "family": "vicuna", "param_count_b": 7, "context_window": 4096, "backend": "mock://?seed=10&latency_ms=4&hallucination_period=7"},
    {"name": "wizardlm-13b", "family": "vicuna", "param_count_b": 13, "context_window": 4096, "backend": "mock://?seed=11&latency_ms=8"},
    {"name": "wizardlm-70b", "family": "vicuna", "param_count_b": 70, "context_window": 4096, "backend": "mock://?seed=12&latency_ms=20"},
    {"name": "vicuna-13b", "family": "vicuna", "param_count_b": 13, "context_window": 4096, "backend": "mock://?seed=13&latency_ms=8&hallucination_period=5"},
    {"name": "mpt-7b-chat", "family": "mpt", "param_count_b": 7, "context_window": 2048, "backend": "mock://?seed=14&latency_ms=4"},
    {"name": "mpt-30b-chat", "family": "mpt", "param_count_b": 30, "context_window": 8192, "backend": "mock://?seed=15&latency_ms=10"},
    {"name": "h2ogpt-7b", "family": "gpt-neox", "param_count_b": 7, "context_window": 4096, "backend": "mock://?seed=16&latency_ms=4"},
    {"name": "h2ogpt-70b", "family": "gpt-neox", "param_count_b": 70, "context_window": 4096, "backend": "mock://?seed=17&latency_ms=20"},
    {"name": "GPT-3.5", "family": "openai-compat", "param_count_b": null, "context_window": 4096, "backend": "mock://?seed=18&latency_ms=6"}
  ]
}
)json";
  return kCatalogue;
}

}  // namespace llmgate
