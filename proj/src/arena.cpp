#include "llmgate/arena.hpp"

#include <algorithm>

#include "llmgate/error.hpp"

namespace llmgate {

VoteResult record_vote(SessionStore& store, const std::string& session_id, VoteRecord vote, IdSource& ids) {
  if (vote.model_a.empty() || vote.model_b.empty() || vote.fanout_id.empty()) {
    throw Error(ErrorCode::invalid_request, "vote needs fanout_id, model_a and model_b");
  }
  if (vote.model_a == vote.model_b) {
    throw Error(ErrorCode::self_vote, "model_a and model_b are both '" + vote.model_a + "'");
  }
  if (!store.has_session(session_id)) {
    throw Error(ErrorCode::unknown_fanout, "unknown fanout '" + vote.fanout_id + "'");
  }
  if (vote.vote_id.empty()) vote.vote_id = ids.next("vote-");
  if (vote.at_ms == 0) vote.at_ms = ids.now_ms();

  VoteResult result;
  result.offset = store.append_event_checked(
      session_id, EventKind::vote_recorded, to_json(vote), [&](const MaterializedState& state) {
        if (state.vote_ids.contains(vote.vote_id)) return false;
        const auto f = state.fanouts.find(vote.fanout_id);
        if (f == state.fanouts.end()) {
          throw Error(ErrorCode::unknown_fanout, "unknown fanout '" + vote.fanout_id + "'");
        }
        for (const auto* m : {&vote.model_a, &vote.model_b}) {
          if (std::find(f->second.models.begin(), f->second.models.end(), *m) == f->second.models.end()) {
            throw Error(ErrorCode::model_not_in_fanout,
                        "model '" + *m + "' did not take part in fanout '" + vote.fanout_id + "'");
          }
        }
        return true;
      });
  result.duplicate = !result.offset.has_value();
  result.vote = std::move(vote);
  return result;
}

std::vector<LeaderboardEntry> session_leaderboard(const SessionStore& store, const std::string& session_id) {
  if (!store.has_session(session_id)) return {};
  return store.state(session_id).leaderboard.entries();
}

}  // namespace llmgate
