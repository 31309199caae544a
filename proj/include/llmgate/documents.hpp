#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "llmgate/conversation.hpp"

namespace llmgate {

class ModelRegistry;
struct ModelId;

enum class DocumentFormat { text, markdown, code, pdf_extracted };

std::string_view to_string(DocumentFormat format) noexcept;
/// Accepts "text", "markdown", "code", "pdf" (and "pdf-extracted"). Throws Error(unsupported_format).
DocumentFormat format_from_string(std::string_view name);
/// .txt, .md/.markdown, common source extensions, .pdf. Throws Error(unsupported_format).
DocumentFormat format_from_extension(const std::filesystem::path& path);

struct Document {
  std::string doc_id;
  std::string source_name;
  DocumentFormat format = DocumentFormat::text;
  std::string body;
  std::int64_t ingested_at_ms = 0;
};

/// Turns raw bytes of a binary format into plain text.
class Extractor {
 public:
  virtual ~Extractor() = default;
  /// Throws Error(extractor_failure).
  virtual std::string extract(std::string_view bytes) const = 0;
};

/// Test extractor: accepts a "%PDF-" file whose content lines are already
/// plain text; '%'-prefixed lines are dropped.
class FixturePdfExtractor final : public Extractor {
 public:
  std::string extract(std::string_view bytes) const override;
};

/// Throws Error(empty_input | unsupported_format | extractor_failure).
/// Text formats pass through with CRLF/CR normalized to LF.
Document ingest(std::string_view bytes, DocumentFormat format, std::string doc_id,
                std::string source_name, const Extractor* pdf_extractor = nullptr,
                std::int64_t ingested_at_ms = 0);

struct Chunk {
  std::string chunk_id;  // "<doc_id>#<ordinal>"
  std::string doc_id;
  std::size_t ordinal = 0;
  std::string text;
  std::size_t token_estimate = 0;
  std::size_t start_byte = 0;  // [start_byte, end_byte) into the document body
  std::size_t end_byte = 0;
};

/// Sliding window of `chunk_tokens` estimated tokens with stride
/// chunk_tokens - overlap. Boundaries snap back to just after whitespace when
/// the window holds any, otherwise to a UTF-8 character boundary.
/// Throws Error(invalid_parameters).
std::vector<Chunk> chunk(const Document& document, std::int64_t chunk_tokens, std::int64_t overlap,
                         int token_divisor = 4);

/// Lowercased maximal runs of ASCII alphanumerics (bytes >= 0x80 count as
/// word characters so UTF-8 words stay whole).
std::vector<std::string> index_terms(std::string_view text);

struct ScoredChunk {
  std::string chunk_id;
  std::string doc_id;
  std::size_t ordinal = 0;
  double score = 0.0;
};

/// Immutable BM25 statistics over a chunk corpus. Safe for concurrent reads.
class RetrievalIndex {
 public:
  static constexpr double kDefaultK1 = 1.2;
  static constexpr double kDefaultB = 0.75;

  RetrievalIndex() = default;

  std::size_t size() const noexcept { return chunks_.size(); }
  double avgdl() const noexcept { return avgdl_; }
  double k1() const noexcept { return k1_; }
  double b() const noexcept { return b_; }
  std::size_t document_frequency(std::string_view term) const;
  std::size_t term_frequency(std::size_t chunk_index, std::string_view term) const;
  std::size_t chunk_length(std::size_t chunk_index) const { return lengths_.at(chunk_index); }
  const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
  const Chunk* find_chunk(std::string_view chunk_id) const;
  double idf(std::string_view term) const;

  /// Sum over query terms (repeats included) of
  /// idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl)),
  /// with idf = ln(1 + (N - df + 0.5) / (df + 0.5)). Zero scores are
  /// excluded; ties order by ascending (doc_id, ordinal).
  std::vector<ScoredChunk> retrieve(std::string_view query, std::size_t k) const;

  friend RetrievalIndex build_index(std::vector<Chunk> chunks, double k1, double b);

 private:
  struct Posting {
    std::uint32_t chunk;
    std::uint32_t tf;
  };

  std::vector<Chunk> chunks_;
  std::vector<std::size_t> lengths_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::size_t> chunk_index_;
  double avgdl_ = 0.0;
  double k1_ = kDefaultK1;
  double b_ = kDefaultB;
};

/// Throws Error(invalid_parameters) unless k1 > 0 and 0 <= b <= 1.
RetrievalIndex build_index(std::vector<Chunk> chunks, double k1 = RetrievalIndex::kDefaultK1,
                           double b = RetrievalIndex::kDefaultB);

std::vector<ScoredChunk> retrieve(const RetrievalIndex& index, std::string_view query, std::size_t k);

struct PackCandidate {
  std::string chunk_id;
  std::string doc_id;
  std::size_t ordinal = 0;
  std::string text;
  std::size_t token_estimate = 0;
  double score = 0.0;
};

struct PackedContext {
  std::vector<PackCandidate> entries;  // rank order
  std::size_t total_token_estimate = 0;
  std::size_t budget_used_of = 0;  // budget - reserved_output
  std::size_t budget = 0;
  std::size_t reserved_output = 0;

  std::vector<std::string> chunk_ids() const;
};

/// Walks candidates in rank order and admits each chunk whose estimate still
/// fits in budget - reserved_output; chunks that do not fit are skipped.
/// Throws Error(invalid_budget) unless budget > reserved_output >= 0.
PackedContext pack_context(std::span<const PackCandidate> ranked, std::int64_t budget,
                           std::int64_t reserved_output);

/// Same, re-estimating each chunk's tokens with the model's divisor.
PackedContext pack_context(const RetrievalIndex& index, std::span<const ScoredChunk> ranked,
                           const ModelRegistry& registry, const ModelId& model_id, std::int64_t budget,
                           std::int64_t reserved_output);

/// Leads the system message that carries packed context.
inline constexpr std::string_view kContextPreamble = "Use the following context to answer.\n\n";

inline constexpr std::size_t kSummaryOutputReserve = 64;
inline constexpr std::string_view kMapInstruction = "Summarize the following passage:\n";
inline constexpr std::string_view kReduceInstruction =
    "Combine the following partial summaries into a single summary:\n";
inline constexpr std::string_view kSummariesPlaceholder = "{summaries}";

/// Map-reduce summarization plan rendered with the model's template: one map
/// prompt per chunk plus a reduce prompt holding the {summaries} placeholder,
/// or a single prompt when the whole document fits. Throws Error(budget_too_small).
std::vector<Prompt> summarize_plan(const Document& document, const ModelRegistry& registry,
                                   const ModelId& model_id, std::int64_t budget);

}  // namespace llmgate
