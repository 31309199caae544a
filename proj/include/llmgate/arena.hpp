#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llmgate/evaluation.hpp"
#include "llmgate/ids.hpp"
#include "llmgate/session_store.hpp"

namespace llmgate {

struct VoteResult {
  bool duplicate = false;       // vote_id already recorded; nothing appended
  VoteRecord vote;              // with vote_id and at filled in
  std::optional<std::int64_t> offset;
};

/// Validates a vote against the session's fanouts and appends it.
/// Throws Error(self_vote | unknown_fanout | model_not_in_fanout | invalid_request).
VoteResult record_vote(SessionStore& store, const std::string& session_id, VoteRecord vote, IdSource& ids);

/// Standings for a session; empty when the session does not exist.
std::vector<LeaderboardEntry> session_leaderboard(const SessionStore& store, const std::string& session_id);

}  // namespace llmgate
