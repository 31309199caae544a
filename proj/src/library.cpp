#include "llmgate/library.hpp"

#include <mutex>
#include <set>

#include "llmgate/error.hpp"

namespace llmgate {

nlohmann::json to_json(const DocumentInfo& info) {
  return {{"doc_id", info.doc_id},           {"source_name", info.source_name},
          {"format", to_string(info.format)}, {"chunk_count", info.chunk_count},
          {"bytes", info.bytes},             {"ingested_at", info.ingested_at_ms}};
}

DocumentLibrary::DocumentLibrary(LibraryOptions options)
    : options_(options), index_(std::make_shared<RetrievalIndex>()) {
  // Surface bad chunking parameters at construction.
  chunk(Document{}, options_.chunk_tokens, options_.overlap, options_.token_divisor);
}

DocumentInfo DocumentLibrary::info_of(const Entry& e) const {
  return {e.document.doc_id, e.document.source_name, e.document.format, e.chunks.size(), e.document.body.size(),
          e.document.ingested_at_ms};
}

DocumentInfo DocumentLibrary::add(Document document) {
  Entry entry;
  entry.chunks = chunk(document, options_.chunk_tokens, options_.overlap, options_.token_divisor);
  entry.document = std::move(document);

  std::unique_lock lock(mutex_);
  const std::string id = entry.document.doc_id;
  entries_[id] = std::move(entry);
  std::vector<Chunk> all;
  for (const auto& [_, e] : entries_) all.insert(all.end(), e.chunks.begin(), e.chunks.end());
  index_ = std::make_shared<RetrievalIndex>(build_index(std::move(all)));
  return info_of(entries_.at(id));
}

std::optional<DocumentInfo> DocumentLibrary::find(const std::string& doc_id) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(doc_id);
  if (it == entries_.end()) return std::nullopt;
  return info_of(it->second);
}

std::optional<Document> DocumentLibrary::document(const std::string& doc_id) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(doc_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second.document;
}

std::vector<DocumentInfo> DocumentLibrary::list() const {
  std::shared_lock lock(mutex_);
  std::vector<DocumentInfo> out;
  for (const auto& [_, e] : entries_) out.push_back(info_of(e));
  return out;
}

std::size_t DocumentLibrary::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::shared_ptr<const RetrievalIndex> DocumentLibrary::index(std::span<const std::string> doc_ids) const {
  std::shared_lock lock(mutex_);
  if (doc_ids.empty()) return index_;
  std::vector<Chunk> subset;
  std::set<std::string> seen;
  for (const auto& id : doc_ids) {
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(ErrorCode::unknown_document, "unknown document '" + id + "'");
    if (!seen.insert(id).second) continue;
    subset.insert(subset.end(), it->second.chunks.begin(), it->second.chunks.end());
  }
  return std::make_shared<RetrievalIndex>(build_index(std::move(subset)));
}

std::vector<ScoredChunk> DocumentLibrary::query(std::string_view query, std::size_t k,
                                                std::span<const std::string> doc_ids) const {
  return index(doc_ids)->retrieve(query, k);
}

PackedContext ground(const DocumentLibrary& library, const ModelRegistry& registry, const std::vector<ModelId>& models,
                     const Conversation& conversation, std::string_view query, std::size_t k, int max_tokens,
                     std::span<const std::string> doc_ids) {
  const auto index = library.index(doc_ids);
  const auto hits = index->retrieve(query, k);
  PackedContext empty;
  if (hits.empty() || models.empty()) return empty;

  std::optional<ModelId> tightest;
  std::int64_t best = 0;
  for (const auto& id : models) {
    const auto d = registry.get(id);
    const auto div = static_cast<std::size_t>(d.token_divisor);
    std::int64_t framing = static_cast<std::int64_t>(estimate_tokens_with_divisor(kContextPreamble, d.token_divisor)) + 2;
    for (const auto& h : hits) framing += static_cast<std::int64_t>((h.chunk_id.size() + 4 + div - 1) / div);
    const auto base = static_cast<std::int64_t>(registry.render_prompt(id, conversation).text.size() + div - 1) /
                      static_cast<std::int64_t>(div);
    const std::int64_t budget = d.context_window - base - framing;
    if (!tightest || budget < best) {
      tightest = id;
      best = budget;
    }
  }
  if (best <= max_tokens || max_tokens < 0) return empty;
  return pack_context(*index, hits, registry, *tightest, best, max_tokens);
}

}  // namespace llmgate
