#include <algorithm>
#include <cmath>

#include "llmgate/evaluation.hpp"

namespace llmgate {

namespace {

double to_rating(std::int64_t units) { return std::ldexp(static_cast<double>(units), -EloTable::kFractionBits); }

std::int64_t to_units(double rating) { return std::llround(std::ldexp(rating, EloTable::kFractionBits)); }

}  // namespace

EloTable::Row& EloTable::row(const std::string& model) {
  auto [it, inserted] = rows_.try_emplace(model);
  if (inserted) it->second.units = to_units(kInitial);
  return it->second;
}

void EloTable::apply(const VoteRecord& vote) {
  if (vote.model_a == vote.model_b) return;
  Row& a = row(vote.model_a);
  Row& b = row(vote.model_b);
  const double ra = to_rating(a.units);
  const double rb = to_rating(b.units);
  const double expected_a = 1.0 / (1.0 + std::pow(10.0, (rb - ra) / 400.0));
  double score_a = 0.5;
  switch (vote.winner) {
    case Winner::a: score_a = 1.0; ++a.wins; ++b.losses; break;
    case Winner::b: score_a = 0.0; ++a.losses; ++b.wins; break;
    case Winner::tie: ++a.ties; ++b.ties; break;
  }
  const std::int64_t delta = to_units(kK * (score_a - expected_a));
  a.units += delta;
  b.units -= delta;
}

double EloTable::rating(const std::string& model) const {
  const auto it = rows_.find(model);
  return it == rows_.end() ? kInitial : to_rating(it->second.units);
}

std::int64_t EloTable::total_units() const {
  std::int64_t sum = 0;
  for (const auto& [_, r] : rows_) sum += r.units;
  return sum;
}

std::vector<LeaderboardEntry> EloTable::entries() const {
  std::vector<LeaderboardEntry> out;
  out.reserve(rows_.size());
  for (const auto& [model, r] : rows_) {
    LeaderboardEntry e;
    e.model_id = model;
    e.elo = to_rating(r.units);
    e.wins = r.wins;
    e.losses = r.losses;
    e.ties = r.ties;
    e.games = r.wins + r.losses + r.ties;
    if (e.games > 0) e.win_rate = (static_cast<double>(e.wins) + 0.5 * static_cast<double>(e.ties)) / e.games;
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LeaderboardEntry& x, const LeaderboardEntry& y) { return x.elo > y.elo; });
  return out;
}

std::vector<LeaderboardEntry> leaderboard(const std::vector<VoteRecord>& votes) {
  EloTable table;
  for (const auto& v : votes) table.apply(v);
  return table.entries();
}

}  // namespace llmgate
