#include "llmgate/documents.hpp"
#include "llmgate/error.hpp"
#include "llmgate/registry.hpp"

namespace llmgate {

std::vector<std::string> PackedContext::chunk_ids() const {
  std::vector<std::string> ids;
  ids.reserve(entries.size());
  for (const auto& e : entries) ids.push_back(e.chunk_id);
  return ids;
}

PackedContext pack_context(std::span<const PackCandidate> ranked, std::int64_t budget,
                           std::int64_t reserved_output) {
  if (reserved_output < 0 || budget <= reserved_output) {
    throw Error(ErrorCode::invalid_budget, "packing requires budget > reserved_output >= 0 (got " +
                                               std::to_string(budget) + ", " + std::to_string(reserved_output) + ")");
  }
  PackedContext packed;
  packed.budget = static_cast<std::size_t>(budget);
  packed.reserved_output = static_cast<std::size_t>(reserved_output);
  packed.budget_used_of = packed.budget - packed.reserved_output;
  for (const auto& candidate : ranked) {
    if (packed.total_token_estimate + candidate.token_estimate <= packed.budget_used_of) {
      packed.total_token_estimate += candidate.token_estimate;
      packed.entries.push_back(candidate);
    }
  }
  return packed;
}

PackedContext pack_context(const RetrievalIndex& index, std::span<const ScoredChunk> ranked,
                           const ModelRegistry& registry, const ModelId& model_id, std::int64_t budget,
                           std::int64_t reserved_output) {
  const auto model = registry.get(model_id);
  std::vector<PackCandidate> candidates;
  candidates.reserve(ranked.size());
  for (const auto& hit : ranked) {
    const Chunk* c = index.find_chunk(hit.chunk_id);
    if (c == nullptr) continue;
    candidates.push_back({c->chunk_id, c->doc_id, c->ordinal, c->text,
                          estimate_tokens_with_divisor(c->text, model.token_divisor), hit.score});
  }
  return pack_context(candidates, budget, reserved_output);
}

namespace {

Prompt render_single(const ModelRegistry& registry, const ModelId& model_id, std::string content) {
  Conversation conv;
  conv.messages.push_back({Role::user, std::move(content)});
  return registry.render_prompt(model_id, conv);
}

}  // namespace

std::vector<Prompt> summarize_plan(const Document& document, const ModelRegistry& registry,
                                   const ModelId& model_id, std::int64_t budget) {
  const auto model = registry.get(model_id);
  const auto tokens = [&](const std::string& s) { return static_cast<std::int64_t>(
                                                      estimate_tokens_with_divisor(s, model.token_divisor)); };
  const std::int64_t input_budget = budget - static_cast<std::int64_t>(kSummaryOutputReserve);
  const std::int64_t map_overhead = tokens(render_single(registry, model_id, std::string(kMapInstruction)).text);
  const auto reduce = render_single(registry, model_id,
                                    std::string(kReduceInstruction) + std::string(kSummariesPlaceholder));
  if (input_budget <= map_overhead || tokens(reduce.text) > input_budget) {
    throw Error(ErrorCode::budget_too_small,
                "budget " + std::to_string(budget) + " leaves no room for input after reserving " +
                    std::to_string(kSummaryOutputReserve) + " output tokens per stage");
  }

  auto whole = render_single(registry, model_id, std::string(kMapInstruction) + document.body);
  if (tokens(whole.text) <= input_budget) return {std::move(whole)};

  const std::int64_t chunk_tokens = input_budget - map_overhead;
  const std::int64_t overlap = chunk_tokens / 10;
  std::vector<Prompt> plan;
  for (const auto& c : chunk(document, chunk_tokens, overlap, model.token_divisor)) {
    plan.push_back(render_single(registry, model_id, std::string(kMapInstruction) + c.text));
  }
  plan.push_back(reduce);
  return plan;
}

}  // namespace llmgate
