#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "llmgate/documents.hpp"

namespace llmgate {

struct RewardScore {
  std::string model_id;
  std::string fanout_id;
  std::string scorer_id;
  double value = 0.0;  // [0, 1]
  std::map<std::string, double> components;
};

struct ScoreRequest {
  std::string model_id;
  std::string fanout_id;
  std::string prompt;
  const PackedContext* context = nullptr;
  std::string response;
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  virtual RewardScore score(const ScoreRequest& request) const = 0;
};

/// grounding = share of response tokens found in the context vocabulary
/// (1 with no context); repetition = 1 - distinct/total trigrams (0 under
/// three tokens); value = clamp(grounding - 0.5 * repetition, 0, 1).
/// An empty response scores 0.
class HeuristicScorer final : public Scorer {
 public:
  static constexpr std::string_view kId = "heuristic";

  std::string id() const override { return std::string(kId); }
  RewardScore score(const ScoreRequest& request) const override;
};

enum class RemoteRange { unit, signed_unit };  // [0, 1] or [-1, 1]

/// POSTs {"prompt", "response"} to `url` and maps the returned "score".
class RemoteScorer final : public Scorer {
 public:
  RemoteScorer(std::string id, std::string url, RemoteRange range,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(10'000),
               std::optional<std::string> auth_token = std::nullopt);

  std::string id() const override { return id_; }
  /// Throws Error(remote_scorer_unreachable).
  RewardScore score(const ScoreRequest& request) const override;

 private:
  std::string id_;
  std::string url_;
  RemoteRange range_;
  std::chrono::milliseconds timeout_;
  std::optional<std::string> auth_token_;
};

class ScorerRegistry {
 public:
  ScorerRegistry();  // with the heuristic scorer

  void add(std::shared_ptr<const Scorer> scorer);
  std::vector<std::string> ids() const;
  /// Throws Error(unknown_scorer).
  RewardScore score(std::string_view scorer_id, const ScoreRequest& request) const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Scorer>, std::less<>> scorers_;
};

enum class Winner { a, b, tie };

std::string_view to_string(Winner winner) noexcept;
/// Throws Error(invalid_request).
Winner winner_from_string(std::string_view name);

struct VoteRecord {
  std::string vote_id;
  std::string fanout_id;
  std::string model_a;
  std::string model_b;
  Winner winner = Winner::tie;
  std::string voter;
  std::int64_t at_ms = 0;

  bool operator==(const VoteRecord&) const = default;
};

nlohmann::json to_json(const VoteRecord& vote);
/// Throws Error(invalid_request) on a malformed record.
VoteRecord vote_from_json(const nlohmann::json& j);

struct LeaderboardEntry {
  std::string model_id;
  double elo = 0.0;
  std::uint64_t wins = 0;
  std::uint64_t losses = 0;
  std::uint64_t ties = 0;
  std::uint64_t games = 0;
  std::optional<double> win_rate;  // absent before the first game
};

nlohmann::json to_json(const LeaderboardEntry& entry);

/// Online Elo ratings. Ratings are held in fixed point (2^-40 units) so each
/// game moves exactly the same amount out of one rating and into the other.
class EloTable {
 public:
  static constexpr double kInitial = 1000.0;
  static constexpr double kK = 32.0;
  static constexpr int kFractionBits = 40;

  void apply(const VoteRecord& vote);
  double rating(const std::string& model) const;
  /// Sum of all ratings in fixed-point units.
  std::int64_t total_units() const;
  std::size_t size() const noexcept { return rows_.size(); }
  /// Sorted by elo descending, then model name ascending.
  std::vector<LeaderboardEntry> entries() const;

 private:
  struct Row {
    std::int64_t units = 0;
    std::uint64_t wins = 0, losses = 0, ties = 0;
  };
  Row& row(const std::string& model);

  std::map<std::string, Row> rows_;
};

/// Replays votes in order from fresh ratings.
std::vector<LeaderboardEntry> leaderboard(const std::vector<VoteRecord>& votes);

}  // namespace llmgate
