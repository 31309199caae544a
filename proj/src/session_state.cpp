#include "llmgate/error.hpp"
#include "llmgate/session_store.hpp"

namespace llmgate {

namespace {

constexpr std::pair<EventKind, std::string_view> kKindNames[] = {
    {EventKind::conversation_turn, "conversation-turn"},
    {EventKind::fanout_started, "fanout-started"},
    {EventKind::token_delta, "token-delta"},
    {EventKind::generation_terminal, "generation-terminal"},
    {EventKind::fanout_complete, "fanout-complete"},
    {EventKind::document_ingested, "document-ingested"},
    {EventKind::score_recorded, "score-recorded"},
    {EventKind::vote_recorded, "vote-recorded"},
};

std::string string_or(const nlohmann::json& j, const char* key, std::string fallback = {}) {
  const auto it = j.find(key);
  return it != j.end() && it->is_string() ? it->get<std::string>() : fallback;
}

}  // namespace

std::string_view to_string(EventKind kind) noexcept {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "conversation-turn";
}

std::optional<EventKind> event_kind_from_string(std::string_view name) noexcept {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

void MaterializedState::apply(const SessionEvent& event) {
  const auto& p = event.payload;
  switch (event.kind) {
    case EventKind::conversation_turn: {
      const auto role = role_from_string(string_or(p, "role"));
      if (role) conversation.messages.push_back({*role, string_or(p, "content")});
      break;
    }
    case EventKind::fanout_started: {
      auto& f = fanouts[string_or(p, "fanout_id")];
      f.models.clear();
      if (const auto it = p.find("models"); it != p.end() && it->is_array()) {
        for (const auto& m : *it) {
          if (m.is_string()) f.models.push_back(m.get<std::string>());
        }
      }
      break;
    }
    case EventKind::token_delta:
      break;
    case EventKind::generation_terminal: {
      auto& f = fanouts[string_or(p, "fanout_id")];
      f.terminals[string_or(p, "model")] = p;
      break;
    }
    case EventKind::fanout_complete:
      fanouts[string_or(p, "fanout_id")].complete = true;
      break;
    case EventKind::document_ingested: {
      nlohmann::json meta = p;
      meta.erase("body");
      documents[string_or(p, "doc_id")] = std::move(meta);
      break;
    }
    case EventKind::score_recorded: {
      const auto it = p.find("value");
      if (it != p.end() && it->is_number()) {
        fanouts[string_or(p, "fanout_id")].scores[string_or(p, "model")] = it->get<double>();
      }
      break;
    }
    case EventKind::vote_recorded: {
      VoteRecord v;
      try {
        v = vote_from_json(p);
      } catch (const Error&) {
        break;
      }
      if (!v.vote_id.empty() && !vote_ids.insert(v.vote_id).second) break;
      leaderboard.apply(v);
      votes.push_back(std::move(v));
      break;
    }
  }
}

nlohmann::json MaterializedState::to_json() const {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& m : conversation.messages) conv.push_back({{"role", to_string(m.role)}, {"content", m.content}});

  nlohmann::json docs = nlohmann::json::array();
  for (const auto& [_, meta] : documents) docs.push_back(meta);

  nlohmann::json fans = nlohmann::json::object();
  for (const auto& [id, f] : fanouts) {
    nlohmann::json terminals = nlohmann::json::object();
    for (const auto& [model, t] : f.terminals) terminals[model] = t;
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [model, s] : f.scores) scores[model] = s;
    fans[id] = {{"models", f.models}, {"complete", f.complete}, {"terminals", terminals}, {"scores", scores}};
  }

  nlohmann::json vote_list = nlohmann::json::array();
  for (const auto& v : votes) vote_list.push_back(llmgate::to_json(v));

  nlohmann::json board = nlohmann::json::array();
  for (const auto& e : leaderboard.entries()) board.push_back(llmgate::to_json(e));

  return {{"conversation", conv}, {"documents", docs}, {"fanouts", fans}, {"votes", vote_list}, {"leaderboard", board}};
}

MaterializedState materialize(std::span<const SessionEvent> events) {
  MaterializedState state;
  for (const auto& e : events) state.apply(e);
  return state;
}

nlohmann::json SessionSnapshot::to_json() const {
  return {{"session_id", session_id}, {"as_of_offset", as_of_offset}, {"state", state}};
}

SessionSnapshot SessionSnapshot::from_json(const nlohmann::json& j) {
  try {
    SessionSnapshot s;
    s.session_id = j.at("session_id").get<std::string>();
    s.as_of_offset = j.at("as_of_offset").get<std::int64_t>();
    s.state = j.at("state");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::corrupt_log, std::string("malformed snapshot: ") + e.what());
  }
}

}  // namespace llmgate
