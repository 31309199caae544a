#include <algorithm>
#include <cmath>

#include "llmgate/documents.hpp"
#include "llmgate/error.hpp"

namespace llmgate {

RetrievalIndex build_index(std::vector<Chunk> chunks, double k1, double b) {
  if (!(k1 > 0.0) || !(b >= 0.0 && b <= 1.0)) {
    throw Error(ErrorCode::invalid_parameters, "BM25 requires k1 > 0 and 0 <= b <= 1");
  }
  RetrievalIndex index;
  index.k1_ = k1;
  index.b_ = b;
  index.lengths_.reserve(chunks.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto terms = index_terms(chunks[i].text);
    total += terms.size();
    index.lengths_.push_back(terms.size());
    std::unordered_map<std::string, std::uint32_t> tf;
    for (const auto& t : terms) ++tf[t];
    for (auto& [term, count] : tf) {
      index.postings_[term].push_back({static_cast<std::uint32_t>(i), count});
    }
    index.chunk_index_.emplace(chunks[i].chunk_id, i);
  }
  for (auto& [_, list] : index.postings_) {
    std::sort(list.begin(), list.end(), [](const auto& x, const auto& y) { return x.chunk < y.chunk; });
  }
  // Corpora whose chunks hold no terms have no postings; avgdl is never divided by.
  index.avgdl_ = total == 0 ? 1.0 : static_cast<double>(total) / static_cast<double>(chunks.size());
  index.chunks_ = std::move(chunks);
  return index;
}

std::size_t RetrievalIndex::document_frequency(std::string_view term) const {
  const auto it = postings_.find(std::string(term));
  return it == postings_.end() ? 0 : it->second.size();
}

std::size_t RetrievalIndex::term_frequency(std::size_t chunk_index, std::string_view term) const {
  const auto it = postings_.find(std::string(term));
  if (it == postings_.end()) return 0;
  const auto& list = it->second;
  const auto pos = std::lower_bound(list.begin(), list.end(), chunk_index,
                                    [](const Posting& p, std::size_t c) { return p.chunk < c; });
  return pos != list.end() && pos->chunk == chunk_index ? pos->tf : 0;
}

const Chunk* RetrievalIndex::find_chunk(std::string_view chunk_id) const {
  const auto it = chunk_index_.find(std::string(chunk_id));
  return it == chunk_index_.end() ? nullptr : &chunks_[it->second];
}

double RetrievalIndex::idf(std::string_view term) const {
  const double n = static_cast<double>(chunks_.size());
  const double df = static_cast<double>(document_frequency(term));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::vector<ScoredChunk> RetrievalIndex::retrieve(std::string_view query, std::size_t k) const {
  if (k == 0 || chunks_.empty()) return {};
  std::vector<double> scores(chunks_.size(), 0.0);
  for (const auto& term : index_terms(query)) {
    const auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(term);
    for (const auto& p : it->second) {
      const double tf = p.tf;
      const double dl = static_cast<double>(lengths_[p.chunk]);
      scores[p.chunk] += w * tf * (k1_ + 1.0) / (tf + k1_ * (1.0 - b_ + b_ * dl / avgdl_));
    }
  }
  std::vector<ScoredChunk> hits;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > 0.0) hits.push_back({chunks_[i].chunk_id, chunks_[i].doc_id, chunks_[i].ordinal, scores[i]});
  }
  const auto better = [](const ScoredChunk& x, const ScoredChunk& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.doc_id != y.doc_id) return x.doc_id < y.doc_id;
    return x.ordinal < y.ordinal;
  };
  if (hits.size() > k) {
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
    hits.resize(k);
  } else {
    std::sort(hits.begin(), hits.end(), better);
  }
  return hits;
}

std::vector<ScoredChunk> retrieve(const RetrievalIndex& index, std::string_view query, std::size_t k) {
  return index.retrieve(query, k);
}

}  // namespace llmgate
