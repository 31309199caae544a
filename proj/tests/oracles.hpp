#pragma once

// Reference implementations written independently of the library, used by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "llmgate/documents.hpp"
#include "llmgate/evaluation.hpp"
#include "llmgate/fanout.hpp"
#include "support.hpp"

namespace oracle {

// ---- BM25 ------------------------------------------------------------------

inline std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80) {
      cur.push_back(static_cast<char>(c));
    } else if (c >= 'A' && c <= 'Z') {
      cur.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct Hit {
  std::string chunk_id;
  double score;
};

// Scores every chunk against every query term, nothing precomputed.
inline std::vector<Hit> bm25(const std::vector<llmgate::Chunk>& chunks, const std::string& query, std::size_t k,
                             double k1 = 1.2, double b = 0.75) {
  const double n = static_cast<double>(chunks.size());
  std::vector<std::vector<std::string>> docs;
  double total = 0;
  for (const auto& c : chunks) {
    docs.push_back(words(c.text));
    total += static_cast<double>(docs.back().size());
  }
  const double avgdl = chunks.empty() ? 0.0 : total / n;
  struct Row {
    std::string doc_id;
    std::size_t ordinal;
    std::string chunk_id;
    double score;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    double score = 0.0;
    for (const auto& term : words(query)) {
      double tf = 0;
      for (const auto& w : docs[i]) tf += w == term ? 1 : 0;
      if (tf == 0) continue;
      double df = 0;
      for (const auto& d : docs) df += std::find(d.begin(), d.end(), term) != d.end() ? 1 : 0;
      const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
      const double dl = static_cast<double>(docs[i].size());
      score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
    }
    if (score > 0.0) rows.push_back({chunks[i].doc_id, chunks[i].ordinal, chunks[i].chunk_id, score});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.doc_id != y.doc_id) return x.doc_id < y.doc_id;
    return x.ordinal < y.ordinal;
  });
  std::vector<Hit> out;
  for (std::size_t i = 0; i < rows.size() && i < k; ++i) out.push_back({rows[i].chunk_id, rows[i].score});
  return out;
}

// Random corpus: several documents of words drawn from a small vocabulary so
// that terms repeat and scores tie.
inline std::vector<llmgate::Chunk> random_corpus(std::mt19937_64& rng, std::size_t max_chunks) {
  static const std::vector<std::string> vocab = {"falcon", "llama", "Vicuna", "mpt", "model", "context", "token",
                                                 "the", "a", "GPU", "inference", "chat", "prompt", "7b", "40b"};
  const std::size_t n = rng() % (max_chunks + 1);
  std::vector<llmgate::Chunk> chunks;
  const std::size_t docs = 1 + rng() % 5;
  std::vector<std::size_t> next_ordinal(docs, 0);
  std::string last_text;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t d = rng() % docs;
    llmgate::Chunk c;
    c.doc_id = "doc" + std::to_string(d);
    c.ordinal = next_ordinal[d]++;
    c.chunk_id = c.doc_id + "#" + std::to_string(c.ordinal);
    if (!last_text.empty() && rng() % 6 == 0) {
      c.text = last_text;  // duplicates force exact ties
    } else {
      const std::size_t len = rng() % 12;
      for (std::size_t w = 0; w < len; ++w) {
        c.text += vocab[rng() % vocab.size()];
        c.text += (rng() % 4 == 0) ? ", " : " ";
      }
    }
    last_text = c.text;
    c.token_estimate = (c.text.size() + 3) / 4;
    c.end_byte = c.text.size();
    chunks.push_back(std::move(c));
  }
  return chunks;
}

inline std::string random_query(std::mt19937_64& rng) {
  static const std::vector<std::string> vocab = {"falcon", "LLAMA", "vicuna", "mpt", "model", "context", "token",
                                                 "the", "gpu", "inference", "unknown", "chat!", "7B", "40b"};
  std::string q;
  const std::size_t len = rng() % 5;
  for (std::size_t i = 0; i < len; ++i) q += vocab[rng() % vocab.size()] + " ";
  return q;
}

// Empty string when `got` matches the oracle; otherwise a description.
inline std::string compare_retrieval(const std::vector<llmgate::ScoredChunk>& got, const std::vector<Hit>& want) {
  if (got.size() != want.size()) {
    return "result count " + std::to_string(got.size()) + " != " + std::to_string(want.size());
  }
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].chunk_id != want[i].chunk_id || got[i].score != want[i].score) {
      std::ostringstream os;
      os.precision(17);
      os << "rank " << i << ": got " << got[i].chunk_id << " " << got[i].score << ", want " << want[i].chunk_id << " "
         << want[i].score;
      return os.str();
    }
  }
  return {};
}

// ---- packing ---------------------------------------------------------------

// Indices admitted by first-fit over rank order.
inline std::vector<std::size_t> greedy_trace(const std::vector<std::size_t>& estimates, std::size_t budget,
                                             std::size_t reserved) {
  std::vector<std::size_t> admitted;
  std::size_t used = 0;
  const std::size_t room = budget - reserved;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (used + estimates[i] > room) continue;
    used += estimates[i];
    admitted.push_back(i);
  }
  return admitted;
}

// ---- Elo -------------------------------------------------------------------

struct Standing {
  std::string model;
  double elo = 1000.0;
  int wins = 0, losses = 0, ties = 0;
};

inline std::vector<Standing> elo_replay(const std::vector<llmgate::VoteRecord>& votes) {
  std::map<std::string, Standing> table;
  for (const auto& v : votes) {
    if (v.model_a == v.model_b) continue;
    auto& a = table[v.model_a];
    auto& b = table[v.model_b];
    a.model = v.model_a;
    b.model = v.model_b;
    const double ea = 1.0 / (1.0 + std::pow(10.0, (b.elo - a.elo) / 400.0));
    const double eb = 1.0 / (1.0 + std::pow(10.0, (a.elo - b.elo) / 400.0));
    double sa = 0.5;
    if (v.winner == llmgate::Winner::a) {
      sa = 1.0;
      ++a.wins;
      ++b.losses;
    } else if (v.winner == llmgate::Winner::b) {
      sa = 0.0;
      ++a.losses;
      ++b.wins;
    } else {
      ++a.ties;
      ++b.ties;
    }
    const double new_a = a.elo + 32.0 * (sa - ea);
    const double new_b = b.elo + 32.0 * ((1.0 - sa) - eb);
    a.elo = new_a;
    b.elo = new_b;
  }
  std::vector<Standing> out;
  for (auto& [_, s] : table) out.push_back(s);
  std::sort(out.begin(), out.end(), [](const Standing& x, const Standing& y) {
    if (x.elo != y.elo) return x.elo > y.elo;
    return x.model < y.model;
  });
  return out;
}

inline std::vector<llmgate::VoteRecord> random_votes(std::mt19937_64& rng, std::size_t max_votes) {
  const std::size_t models = 2 + rng() % 6;
  const std::size_t n = rng() % (max_votes + 1);
  std::vector<llmgate::VoteRecord> votes;
  for (std::size_t i = 0; i < n; ++i) {
    llmgate::VoteRecord v;
    v.vote_id = "v" + std::to_string(i);
    v.fanout_id = "f";
    const auto a = rng() % models;
    auto b = rng() % (models - 1);
    if (b >= a) ++b;
    v.model_a = "model-" + std::string(1, static_cast<char>('a' + a));
    v.model_b = "model-" + std::string(1, static_cast<char>('a' + b));
    const auto w = rng() % 3;
    v.winner = w == 0 ? llmgate::Winner::a : w == 1 ? llmgate::Winner::b : llmgate::Winner::tie;
    votes.push_back(v);
  }
  return votes;
}

inline std::string compare_leaderboard(const std::vector<llmgate::LeaderboardEntry>& got,
                                       const std::vector<Standing>& want, double tolerance) {
  if (got.size() != want.size()) return "entry count differs";
  std::map<std::string, const Standing*> by_model;
  for (const auto& s : want) by_model[s.model] = &s;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const auto& g = got[i];
    const auto it = by_model.find(g.model_id);
    if (it == by_model.end()) return "unexpected model " + g.model_id;
    const auto& w = *it->second;
    if (std::fabs(g.elo - w.elo) > tolerance) {
      std::ostringstream os;
      os.precision(17);
      os << g.model_id << ": elo " << g.elo << " vs " << w.elo;
      return os.str();
    }
    if (g.wins != static_cast<std::uint64_t>(w.wins) || g.losses != static_cast<std::uint64_t>(w.losses) ||
        g.ties != static_cast<std::uint64_t>(w.ties) || g.games != g.wins + g.losses + g.ties) {
      return g.model_id + ": counters differ";
    }
    if (!g.win_rate || *g.win_rate < 0.0 || *g.win_rate > 1.0 ||
        std::fabs(*g.win_rate - (w.wins + 0.5 * w.ties) / (w.wins + w.losses + w.ties)) > 1e-12) {
      return g.model_id + ": win_rate differs";
    }
    // Same position as the oracle unless the two ratings are within tolerance.
    if (want[i].model != g.model_id && std::fabs(want[i].elo - g.elo) > tolerance) {
      return "order differs at " + std::to_string(i);
    }
    if (i > 0 && (got[i - 1].elo < g.elo || (got[i - 1].elo == g.elo && got[i - 1].model_id > g.model_id))) {
      return "not sorted at " + std::to_string(i);
    }
  }
  return {};
}

// ---- fanout streams --------------------------------------------------------

// Checks the merged-feed invariants; empty string when they hold.
inline std::string check_feed(const std::vector<llmgate::FanoutEvent>& feed,
                              const std::vector<std::string>& models) {
  if (feed.empty()) return "empty feed";
  for (std::size_t i = 0; i < feed.size(); ++i) {
    if (feed[i].merge_seq != i) return "merge_seq " + std::to_string(feed[i].merge_seq) + " at position " + std::to_string(i);
    if (feed[i].is_complete() != (i + 1 == feed.size())) return "fanout-complete not last or repeated";
  }
  std::map<std::string, std::uint64_t> next_seq;
  std::map<std::string, int> terminals;
  for (const auto& m : models) {
    next_seq[m] = 0;
    terminals[m] = 0;
  }
  for (std::size_t i = 0; i + 1 < feed.size(); ++i) {
    const auto& t = feed[i].inner;
    if (!next_seq.contains(t.model_id)) return "event for unexpected model " + t.model_id;
    if (terminals[t.model_id] != 0) return t.model_id + ": event after terminal";
    if (t.seq != next_seq[t.model_id]) {
      return t.model_id + ": seq " + std::to_string(t.seq) + " expected " + std::to_string(next_seq[t.model_id]);
    }
    ++next_seq[t.model_id];
    if (t.terminal()) ++terminals[t.model_id];
  }
  for (const auto& [m, n] : terminals) {
    if (n != 1) return m + ": " + std::to_string(n) + " terminals";
  }
  return {};
}

// Randomized fanouts over mock models with random latencies, failures and
// cancellations. Returns the first violation, or empty.
inline std::string random_fanouts(std::size_t runs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::string, std::string>> specs;
  for (int m = 0; m < 6; ++m) {
    for (int variant = 0; variant < 4; ++variant) {
      std::string url = "mock://?seed=" + std::to_string(m * 10 + variant) +
                        "&latency_us=" + std::to_string(rng() % 400);
      if (variant == 1) url += "&failure_after=" + std::to_string(rng() % 6);
      if (variant == 2) url += "&hallucination_period=" + std::to_string(2 + rng() % 4);
      if (variant == 3) url += "&failure_after=0";
      specs.emplace_back("m" + std::to_string(m) + "v" + std::to_string(variant), url);
    }
  }
  auto registry = testing::mock_registry(specs);
  llmgate::FanoutOptions options;
  options.buffer_capacity = 8 + rng() % 64;
  llmgate::FanoutOrchestrator orchestrator(*registry, options);

  for (std::size_t run = 0; run < runs; ++run) {
    llmgate::FanoutRequest request;
    request.conversation = testing::user_turn("compare these answers " + std::to_string(run));
    request.params.max_tokens = static_cast<int>(rng() % 20);
    std::set<std::size_t> picked;
    const std::size_t width = 1 + rng() % 5;
    while (picked.size() < width) picked.insert(rng() % specs.size());
    std::vector<std::string> models;
    for (auto i : picked) {
      request.model_ids.push_back(llmgate::ModelId{specs[i].first});
      models.push_back(specs[i].first);
    }
    std::shuffle(request.model_ids.begin(), request.model_ids.end(), rng);

    auto stream = orchestrator.fanout(request);
    const auto action = rng() % 4;
    std::vector<llmgate::FanoutEvent> feed;
    if (action == 0) {
      std::this_thread::sleep_for(std::chrono::microseconds(rng() % 2000));
      orchestrator.cancel(stream.fanout_id());
      feed = stream.collect();
    } else if (action == 1) {
      // Cancel from the consuming thread mid-feed.
      const std::size_t after = rng() % 6;
      while (auto ev = stream.next()) {
        feed.push_back(*ev);
        if (feed.size() == after) orchestrator.cancel(stream.fanout_id());
      }
    } else {
      feed = stream.collect();
    }
    if (auto err = check_feed(feed, models); !err.empty()) {
      return "run " + std::to_string(run) + ": " + err;
    }
  }
  return {};
}

}  // namespace oracle
