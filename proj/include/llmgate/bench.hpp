#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "llmgate/backend.hpp"
#include "llmgate/fanout.hpp"
#include "llmgate/library.hpp"
#include "llmgate/registry.hpp"

namespace llmgate {

struct BenchOptions {
  std::vector<std::string> models;  // names or ids
  GenerationParams params;
  /// When set, each prompt is grounded in the library's top `k` chunks.
  const DocumentLibrary* library = nullptr;
  std::size_t k = 5;
  FanoutOptions fanout;
};

struct BenchRow {
  std::size_t prompt_index = 0;
  std::string prompt;
  std::string model;
  double latency_ms = 0.0;
  std::uint64_t tokens = 0;  // delta events
  std::string finish;        // stop, length, or error
  double score = 0.0;
  double grounding = 0.0;
  double repetition = 0.0;
  std::vector<std::string> context_chunks;
};

/// One prompt per line; blank lines are skipped. Throws Error(empty_input)
/// when the file cannot be read.
std::vector<std::string> read_prompts(const std::filesystem::path& path);

/// Runs one fanout per prompt, in order, and scores every response with the
/// heuristic scorer. Latency for mock backends is the simulated delay
/// (tokens x per-token latency) so the table is reproducible; other
/// backends report measured wall-clock time. Throws Error(unknown_model)
/// before any generation starts.
std::vector<BenchRow> run_bench(const ModelRegistry& registry, const std::vector<std::string>& prompts,
                                const BenchOptions& options);

/// Tab-separated table with a header row.
std::string bench_tsv(const std::vector<BenchRow>& rows);

/// Writes through a temporary sibling and renames over `path`.
/// Throws Error(storage_failure).
void write_file_atomically(const std::filesystem::path& path, std::string_view content);

}  // namespace llmgate
