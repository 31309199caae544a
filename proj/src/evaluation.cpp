#include "llmgate/evaluation.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include <httplib.h>

#include "llmgate/error.hpp"

namespace llmgate {

RewardScore HeuristicScorer::score(const ScoreRequest& request) const {
  RewardScore out;
  out.model_id = request.model_id;
  out.fanout_id = request.fanout_id;
  out.scorer_id = id();

  const auto tokens = index_terms(request.response);
  if (tokens.empty()) {
    out.components = {{"grounding", 0.0}, {"repetition", 0.0}};
    return out;
  }

  double grounding = 1.0;
  if (request.context != nullptr) {
    std::unordered_set<std::string> vocabulary;
    for (const auto& e : request.context->entries) {
      for (auto& t : index_terms(e.text)) vocabulary.insert(std::move(t));
    }
    std::size_t hits = 0;
    for (const auto& t : tokens) hits += vocabulary.contains(t) ? 1 : 0;
    grounding = static_cast<double>(hits) / static_cast<double>(tokens.size());
  }

  double repetition = 0.0;
  if (tokens.size() >= 3) {
    std::set<std::tuple<std::string_view, std::string_view, std::string_view>> distinct;
    const std::size_t total = tokens.size() - 2;
    for (std::size_t i = 0; i < total; ++i) distinct.emplace(tokens[i], tokens[i + 1], tokens[i + 2]);
    repetition = 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
  }

  out.value = std::clamp(grounding - 0.5 * repetition, 0.0, 1.0);
  out.components = {{"grounding", grounding}, {"repetition", repetition}};
  return out;
}

RemoteScorer::RemoteScorer(std::string id, std::string url, RemoteRange range, std::chrono::milliseconds timeout,
                           std::optional<std::string> auth_token)
    : id_(std::move(id)), url_(std::move(url)), range_(range), timeout_(timeout), auth_token_(std::move(auth_token)) {}

RewardScore RemoteScorer::score(const ScoreRequest& request) const {
  const auto scheme_end = url_.find("://");
  const auto path_start = scheme_end == std::string::npos ? std::string::npos : url_.find('/', scheme_end + 3);
  const std::string origin = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

  httplib::Client client(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  if (auth_token_) client.set_bearer_token_auth(*auth_token_);

  const nlohmann::json body = {{"prompt", request.prompt}, {"response", request.response}};
  const auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::remote_scorer_unreachable,
                "scorer '" + id_ + "' unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::remote_scorer_unreachable,
                "scorer '" + id_ + "' returned HTTP " + std::to_string(res->status));
  }
  double raw = 0.0;
  try {
    raw = nlohmann::json::parse(res->body).at("score").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::remote_scorer_unreachable, "scorer '" + id_ + "' sent a malformed reply: " + e.what());
  }

  RewardScore out;
  out.model_id = request.model_id;
  out.fanout_id = request.fanout_id;
  out.scorer_id = id_;
  out.components["raw"] = raw;
  out.value = std::clamp(range_ == RemoteRange::signed_unit ? (raw + 1.0) / 2.0 : raw, 0.0, 1.0);
  return out;
}

ScorerRegistry::ScorerRegistry() { add(std::make_shared<HeuristicScorer>()); }

void ScorerRegistry::add(std::shared_ptr<const Scorer> scorer) {
  std::lock_guard lock(mutex_);
  scorers_[scorer->id()] = std::move(scorer);
}

std::vector<std::string> ScorerRegistry::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : scorers_) out.push_back(id);
  return out;
}

RewardScore ScorerRegistry::score(std::string_view scorer_id, const ScoreRequest& request) const {
  std::shared_ptr<const Scorer> scorer;
  {
    std::lock_guard lock(mutex_);
    const auto it = scorers_.find(scorer_id);
    if (it == scorers_.end()) throw Error(ErrorCode::unknown_scorer, "unknown scorer '" + std::string(scorer_id) + "'");
    scorer = it->second;
  }
  return scorer->score(request);
}

std::string_view to_string(Winner winner) noexcept {
  switch (winner) {
    case Winner::a: return "a";
    case Winner::b: return "b";
    case Winner::tie: return "tie";
  }
  return "tie";
}

Winner winner_from_string(std::string_view name) {
  if (name == "a") return Winner::a;
  if (name == "b") return Winner::b;
  if (name == "tie") return Winner::tie;
  throw Error(ErrorCode::invalid_request, "winner must be \"a\", \"b\" or \"tie\"");
}

nlohmann::json to_json(const VoteRecord& vote) {
  return {{"vote_id", vote.vote_id}, {"fanout_id", vote.fanout_id}, {"model_a", vote.model_a},
          {"model_b", vote.model_b}, {"winner", to_string(vote.winner)}, {"voter", vote.voter},
          {"at", vote.at_ms}};
}

VoteRecord vote_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_request, "vote must be a JSON object");
  const auto str = [&](const char* key, bool required) -> std::string {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
      if (required) throw Error(ErrorCode::invalid_request, std::string("vote field '") + key + "' is required");
      return {};
    }
    if (!it->is_string()) throw Error(ErrorCode::invalid_request, std::string("vote field '") + key + "' must be a string");
    return it->get<std::string>();
  };
  VoteRecord v;
  v.vote_id = str("vote_id", false);
  v.fanout_id = str("fanout_id", true);
  v.model_a = str("model_a", true);
  v.model_b = str("model_b", true);
  v.winner = winner_from_string(str("winner", true));
  v.voter = str("voter", false);
  if (const auto it = j.find("at"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw Error(ErrorCode::invalid_request, "vote field 'at' must be an integer");
    v.at_ms = it->get<std::int64_t>();
  }
  return v;
}

nlohmann::json to_json(const LeaderboardEntry& entry) {
  nlohmann::json j = {{"model", entry.model_id}, {"elo", entry.elo},     {"wins", entry.wins},
                      {"losses", entry.losses},  {"ties", entry.ties},   {"games", entry.games}};
  j["win_rate"] = entry.win_rate ? nlohmann::json(*entry.win_rate) : nlohmann::json(nullptr);
  return j;
}

}  // namespace llmgate
