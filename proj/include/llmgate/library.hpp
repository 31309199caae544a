#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "llmgate/documents.hpp"
#include "llmgate/registry.hpp"

namespace llmgate {

struct LibraryOptions {
  std::int64_t chunk_tokens = 512;
  std::int64_t overlap = 64;
  int token_divisor = 4;
};

struct DocumentInfo {
  std::string doc_id;
  std::string source_name;
  DocumentFormat format = DocumentFormat::text;
  std::size_t chunk_count = 0;
  std::size_t bytes = 0;
  std::int64_t ingested_at_ms = 0;
};

nlohmann::json to_json(const DocumentInfo& info);

/// Ingested documents, their chunks and a BM25 index over all of them.
/// Thread-safe; the index is rebuilt on every change and shared immutably.
class DocumentLibrary {
 public:
  explicit DocumentLibrary(LibraryOptions options = {});

  const LibraryOptions& options() const noexcept { return options_; }

  /// Chunks and indexes the document, replacing any with the same doc_id.
  DocumentInfo add(Document document);
  std::optional<DocumentInfo> find(const std::string& doc_id) const;
  std::optional<Document> document(const std::string& doc_id) const;
  std::vector<DocumentInfo> list() const;
  std::size_t size() const;

  /// Index over every document, or over `doc_ids` only.
  /// Throws Error(unknown_document).
  std::shared_ptr<const RetrievalIndex> index(std::span<const std::string> doc_ids = {}) const;

  std::vector<ScoredChunk> query(std::string_view query, std::size_t k,
                                 std::span<const std::string> doc_ids = {}) const;

 private:
  struct Entry {
    Document document;
    std::vector<Chunk> chunks;
  };
  DocumentInfo info_of(const Entry& e) const;

  LibraryOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Entry> entries_;
  std::shared_ptr<const RetrievalIndex> index_;
};

/// Retrieves the top `k` chunks for `query` and packs them for the tightest
/// model among `models`: the budget is that model's window less its rendered
/// conversation and the context framing, with `max_tokens` reserved for output.
/// Returns an empty context when nothing fits.
PackedContext ground(const DocumentLibrary& library, const ModelRegistry& registry, const std::vector<ModelId>& models,
                     const Conversation& conversation, std::string_view query, std::size_t k, int max_tokens,
                     std::span<const std::string> doc_ids = {});

}  // namespace llmgate
