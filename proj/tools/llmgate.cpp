#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "llmgate/bench.hpp"
#include "llmgate/config.hpp"
#include "llmgate/error.hpp"
#include "llmgate/gateway.hpp"
#include "llmgate/library.hpp"
#include "llmgate/registry.hpp"
#include "llmgate/session_store.hpp"

namespace {

namespace fs = std::filesystem;
using namespace llmgate;

enum Exit : int { kOk = 0, kUsage = 2, kEnvironment = 3, kRuntime = 4 };

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::bad_config:
    case ErrorCode::invalid_request:
    case ErrorCode::invalid_params:
    case ErrorCode::invalid_parameters:
    case ErrorCode::unknown_model:
    case ErrorCode::unsupported_format:
    case ErrorCode::duplicate_name:
    case ErrorCode::duplicate_id:
    case ErrorCode::unknown_template:
    case ErrorCode::unknown_backend:
    case ErrorCode::invalid_descriptor:
    case ErrorCode::invalid_template:
    case ErrorCode::invalid_binding:
      return kUsage;
    case ErrorCode::session_locked:
      return kEnvironment;
    default:
      return kRuntime;
  }
}

int fail(const Error& e) {
  std::cerr << "llmgate: " << e.what() << '\n';
  return exit_code_for(e);
}

std::shared_ptr<ModelRegistry> make_registry(const std::optional<fs::path>& catalogue) {
  auto registry = std::make_shared<ModelRegistry>();
  try {
    if (catalogue) load_catalogue_file(*registry, *catalogue);
    else load_catalogue(*registry, default_catalogue_json());
  } catch (const Error& e) {
    throw Error(ErrorCode::bad_config, std::string("registry seed: ") + e.what());
  }
  return registry;
}

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string config;
  int port = -1;
  std::string bind;
  std::string data_dir;
  bool json = false;
};

int cmd_serve(const ServeArgs& args) {
  auto env = process_environment();
  std::string config_path = args.config;
  if (config_path.empty()) {
    if (const auto it = env.find("LLMGATE_CONFIG"); it != env.end()) config_path = it->second;
  }
  GatewayConfig config;
  std::shared_ptr<ModelRegistry> registry;
  try {
    config = load_config(optional_path(config_path), env);
    if (args.port >= 0) config.port = args.port;
    if (!args.bind.empty()) config.bind_address = args.bind;
    if (!args.data_dir.empty()) config.data_dir = args.data_dir;
    registry = make_registry(config.registry_seed);
  } catch (const Error& e) {
    std::cerr << "llmgate: " << e.what() << '\n';
    return kUsage;
  }

  // Signals are taken synchronously by a dedicated thread.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::unique_ptr<Gateway> gateway;
  try {
    gateway = std::make_unique<Gateway>(config, registry);
  } catch (const Error& e) {
    return fail(e);
  }
  const int port = gateway->bind();
  if (port < 0) {
    std::cerr << "llmgate: cannot bind " << config.bind_address << ':' << config.port << '\n';
    return kEnvironment;
  }
  if (args.json) {
    std::cout << nlohmann::json{{"event", "listening"}, {"address", config.bind_address}, {"port", port}}.dump()
              << std::endl;
  } else {
    std::cout << "listening on " << config.bind_address << ':' << port << std::endl;
  }

  std::jthread waiter([&gateway, signals](std::stop_token stop) {
    while (!stop.stop_requested()) {
      timespec tick{0, 200'000'000};
      siginfo_t info;
      if (sigtimedwait(&signals, &info, &tick) > 0) {
        spdlog::info("signal {} received, shutting down", info.si_signo);
        gateway->stop();
        return;
      }
    }
  });
  const bool clean = gateway->serve();
  waiter.request_stop();
  waiter.join();
  gateway->stop();
  return clean ? kOk : kRuntime;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string prompts;
  std::vector<std::string> models;
  std::string output;
  std::string catalogue;
  std::vector<std::string> documents;
  std::size_t k = 5;
  int max_tokens = 32;
  double temperature = 0.7;
  std::int64_t chunk_tokens = 512;
  std::int64_t overlap = 64;
  bool json = false;
};

DocumentFormat format_for(const fs::path& path, const std::string& forced) {
  return forced.empty() ? format_from_extension(path) : format_from_string(forced);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::empty_input, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

std::string doc_id_for(const fs::path& path, std::set<std::string>& taken) {
  std::string stem = path.stem().string();
  for (char& c : stem) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  if (stem.empty()) stem = "doc";
  std::string id = stem;
  for (int n = 2; !taken.insert(id).second; ++n) id = stem + "-" + std::to_string(n);
  return id;
}

int cmd_bench(const BenchArgs& args) {
  try {
    auto registry = make_registry(optional_path(args.catalogue));
    BenchOptions options;
    for (const auto& m : args.models) {
      std::stringstream parts(m);
      std::string name;
      while (std::getline(parts, name, ',')) {
        if (!name.empty()) options.models.push_back(name);
      }
    }
    for (const auto& name : options.models) {
      if (!registry->find_by_name(name) && !registry->find(ModelId{name})) {
        throw Error(ErrorCode::unknown_model, "model '" + name + "' is not registered");
      }
    }
    options.params.max_tokens = args.max_tokens;
    options.params.temperature = args.temperature;
    options.k = args.k;

    DocumentLibrary library(LibraryOptions{args.chunk_tokens, args.overlap, 4});
    if (!args.documents.empty()) {
      const FixturePdfExtractor pdf;
      std::set<std::string> taken;
      for (const auto& p : args.documents) {
        const fs::path path(p);
        library.add(ingest(read_file(path), format_for(path, ""), doc_id_for(path, taken), path.filename().string(), &pdf));
      }
      options.library = &library;
    }

    const auto prompts = read_prompts(args.prompts);
    const auto rows = run_bench(*registry, prompts, options);
    write_file_atomically(args.output, bench_tsv(rows));
    if (args.json) {
      std::cout << nlohmann::json{{"output", args.output}, {"rows", rows.size()}, {"prompts", prompts.size()}}.dump()
                << '\n';
    } else {
      std::cout << "wrote " << rows.size() << " rows to " << args.output << '\n';
    }
    return kOk;
  } catch (const Error& e) {
    return fail(e);
  }
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::vector<std::string> paths;
  std::string format;
  std::string data_dir;
  std::int64_t chunk_tokens = 512;
  std::int64_t overlap = 64;
  bool json = false;
};

int cmd_ingest(const IngestArgs& args) {
  try {
    DocumentLibrary library(LibraryOptions{args.chunk_tokens, args.overlap, 4});
    const FixturePdfExtractor pdf;
    std::unique_ptr<SessionStore> store;
    std::set<std::string> taken;
    if (!args.data_dir.empty()) {
      store = std::make_unique<SessionStore>(SessionStoreOptions{args.data_dir, false, {}});
      store->create_session("documents");
      for (const auto& [id, _] : store->state("documents").documents) taken.insert(id);
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : args.paths) {
      const fs::path path(p);
      if (!fs::is_regular_file(path)) throw Error(ErrorCode::empty_input, "no such file: " + p);
      auto doc = ingest(read_file(path), format_for(path, args.format), doc_id_for(path, taken),
                        path.filename().string(), &pdf);
      if (store) {
        store->append_event("documents", EventKind::document_ingested,
                            {{"doc_id", doc.doc_id},
                             {"source_name", doc.source_name},
                             {"format", to_string(doc.format)},
                             {"ingested_at", doc.ingested_at_ms},
                             {"body", doc.body}});
      }
      const auto info = library.add(std::move(doc));
      if (args.json) {
        out.push_back(to_json(info));
      } else {
        std::cout << info.doc_id << '\t' << info.chunk_count << '\t' << info.source_name << '\n';
      }
    }
    if (args.json) std::cout << out.dump() << '\n';
    return kOk;
  } catch (const Error& e) {
    return fail(e);
  }
}

// ---------------------------------------------------------------------------

int cmd_models(const std::string& catalogue, bool json) {
  try {
    auto registry = make_registry(optional_path(catalogue));
    if (json) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& d : registry->models()) {
        out.push_back({{"name", d.name},
                       {"family", to_string(d.family)},
                       {"size", d.size_label()},
                       {"context_window", d.context_window}});
      }
      std::cout << out.dump() << '\n';
      return kOk;
    }
    std::printf("%-28s %-16s %6s %8s\n", "NAME", "FAMILY", "SIZE", "CONTEXT");
    for (const auto& d : registry->models()) {
      std::printf("%-28s %-16s %6s %8d\n", d.name.c_str(), std::string(to_string(d.family)).c_str(),
                  d.size_label().c_str(), d.context_window);
    }
    return kOk;
  } catch (const Error& e) {
    return fail(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-model LLM gateway: serve, bench, ingest, models"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP gateway");
  serve_cmd->add_option("--config", serve.config, "Config file (JSON); defaults to $LLMGATE_CONFIG");
  serve_cmd->add_option("--port", serve.port, "Override the configured port (0 picks a free one)");
  serve_cmd->add_option("--bind", serve.bind, "Override the configured bind address");
  serve_cmd->add_option("--data-dir", serve.data_dir, "Override the configured data directory");
  serve_cmd->add_flag("--json", serve.json, "Announce the listening address as JSON");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Run prompts through a fanout and write a score table");
  bench_cmd->add_option("--prompts", bench.prompts, "File with one prompt per line")->required();
  bench_cmd->add_option("--models", bench.models, "Model names (repeat or comma-separate)")->required();
  bench_cmd->add_option("--output", bench.output, "Output TSV path")->required();
  bench_cmd->add_option("--catalogue", bench.catalogue, "Model catalogue JSON (built-in when omitted)");
  bench_cmd->add_option("--documents", bench.documents, "Documents to ground prompts in");
  bench_cmd->add_option("--k", bench.k, "Chunks retrieved per prompt");
  bench_cmd->add_option("--max-tokens", bench.max_tokens, "Generation length")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--temperature", bench.temperature, "Sampling temperature");
  bench_cmd->add_option("--chunk-tokens", bench.chunk_tokens, "Chunk size in estimated tokens");
  bench_cmd->add_option("--overlap", bench.overlap, "Chunk overlap in estimated tokens");
  bench_cmd->add_flag("--json", bench.json, "Print a JSON summary");

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Ingest documents and print their ids and chunk counts");
  ingest_cmd->add_option("paths", ingest_args.paths, "Files to ingest")->required();
  ingest_cmd->add_option("--format", ingest_args.format, "text, markdown, code or pdf (default: by extension)");
  ingest_cmd->add_option("--data-dir", ingest_args.data_dir, "Persist into this gateway data directory");
  ingest_cmd->add_option("--chunk-tokens", ingest_args.chunk_tokens, "Chunk size in estimated tokens");
  ingest_cmd->add_option("--overlap", ingest_args.overlap, "Chunk overlap in estimated tokens");
  ingest_cmd->add_flag("--json", ingest_args.json, "Print JSON");

  std::string models_catalogue;
  bool models_json = false;
  auto* models_cmd = app.add_subcommand("models", "List registered models");
  models_cmd->add_option("--catalogue", models_catalogue, "Model catalogue JSON (built-in when omitted)");
  models_cmd->add_flag("--json", models_json, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("llmgate"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (*serve_cmd) return cmd_serve(serve);
  if (*bench_cmd) return cmd_bench(bench);
  if (*ingest_cmd) return cmd_ingest(ingest_args);
  if (*models_cmd) return cmd_models(models_catalogue, models_json);
  return kUsage;
}
