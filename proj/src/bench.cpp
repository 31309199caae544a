#include "llmgate/bench.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "llmgate/error.hpp"
#include "llmgate/evaluation.hpp"

namespace llmgate {

namespace {

std::string tsv_cell(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

}  // namespace

std::vector<std::string> read_prompts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::empty_input, "cannot read prompts file " + path.string());
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    prompts.push_back(line);
  }
  return prompts;
}

std::vector<BenchRow> run_bench(const ModelRegistry& registry, const std::vector<std::string>& prompts,
                                const BenchOptions& options) {
  if (options.models.empty()) throw Error(ErrorCode::invalid_request, "bench needs at least one model");
  std::vector<ModelDescriptor> models;
  for (const auto& name : options.models) {
    auto d = registry.find_by_name(name);
    if (!d) d = registry.find(ModelId{name});
    if (!d) throw Error(ErrorCode::unknown_model, "model '" + name + "' is not registered");
    models.push_back(*d);
  }
  std::vector<ModelId> ids;
  std::map<std::string, ResolvedModel> resolved;
  for (const auto& d : models) {
    ids.push_back(d.id);
    resolved.emplace(d.id.value, registry.resolve(d.id));
  }

  const HeuristicScorer scorer;
  FanoutOrchestrator orchestrator(registry, options.fanout, std::make_shared<IdSource>(0));
  std::vector<BenchRow> rows;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    FanoutRequest request;
    request.conversation.messages.push_back({Role::user, prompts[i]});
    request.model_ids = ids;
    request.params = options.params;
    if (options.library != nullptr) {
      request.context = ground(*options.library, registry, ids, request.conversation, prompts[i], options.k,
                               options.params.max_tokens);
    }

    const auto started = std::chrono::steady_clock::now();
    auto stream = orchestrator.fanout(request);
    std::map<std::string, std::string> texts;
    std::map<std::string, std::uint64_t> deltas;
    std::map<std::string, TokenEvent> terminals;
    std::map<std::string, double> wall_ms;
    for (const auto& ev : stream.collect()) {
      if (ev.is_complete()) break;
      const auto& t = ev.inner;
      if (t.kind == TokenEventKind::delta) {
        texts[t.model_id] += t.text;
        ++deltas[t.model_id];
      } else {
        terminals[t.model_id] = t;
        wall_ms[t.model_id] = std::chrono::duration<double, std::milli>(t.emitted_at - started).count();
      }
    }

    for (const auto& d : models) {
      const auto& r = resolved.at(d.id.value);
      BenchRow row;
      row.prompt_index = i;
      row.prompt = prompts[i];
      row.model = d.name;
      row.tokens = deltas[d.id.value];
      const auto term = terminals.find(d.id.value);
      row.finish = term == terminals.end() || term->second.kind == TokenEventKind::error
                       ? std::string("error")
                       : std::string(to_string(term->second.finish_reason));
      if (r.backend.kind == BackendKind::mock) {
        const auto per_token = r.backend.per_token_latency.value_or(std::chrono::microseconds{0});
        row.latency_ms = std::chrono::duration<double, std::milli>(per_token).count() * static_cast<double>(row.tokens);
      } else {
        row.latency_ms = wall_ms[d.id.value];
      }
      ScoreRequest sr;
      sr.model_id = d.name;
      sr.fanout_id = stream.fanout_id();
      sr.prompt = prompts[i];
      sr.context = request.context ? &*request.context : nullptr;
      sr.response = texts[d.id.value];
      const auto score = scorer.score(sr);
      row.score = score.value;
      row.grounding = score.components.at("grounding");
      row.repetition = score.components.at("repetition");
      if (request.context) row.context_chunks = request.context->chunk_ids();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string bench_tsv(const std::vector<BenchRow>& rows) {
  std::string out = "prompt_index\tmodel\tlatency_ms\ttokens\tfinish_reason\tscore\tgrounding\trepetition\tcontext\tprompt\n";
  for (const auto& r : rows) {
    std::string context;
    for (const auto& c : r.context_chunks) {
      if (!context.empty()) context += ',';
      context += c;
    }
    out += std::to_string(r.prompt_index) + '\t' + tsv_cell(r.model) + '\t' + fixed(r.latency_ms, 3) + '\t' +
           std::to_string(r.tokens) + '\t' + r.finish + '\t' + fixed(r.score, 6) + '\t' + fixed(r.grounding, 6) +
           '\t' + fixed(r.repetition, 6) + '\t' + tsv_cell(context.empty() ? "-" : context) + '\t' +
           tsv_cell(r.prompt) + '\n';
  }
  return out;
}

void write_file_atomically(const std::filesystem::path& path, std::string_view content) {
  const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::storage_failure, "cannot create " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out.flush()) {
      std::filesystem::remove(tmp);
      throw Error(ErrorCode::storage_failure, "cannot write " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorCode::storage_failure, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

}  // namespace llmgate
