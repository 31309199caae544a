#include "llmgate/conversation.hpp"

#include "llmgate/error.hpp"

namespace llmgate {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

std::optional<Role> role_from_string(std::string_view name) noexcept {
  if (name == "system") return Role::system;
  if (name == "user") return Role::user;
  if (name == "assistant") return Role::assistant;
  return std::nullopt;
}

void Conversation::validate() const {
  if (messages.empty()) {
    throw Error(ErrorCode::empty_conversation, "conversation has no messages");
  }
  std::size_t first_turn = 0;
  if (messages.front().role == Role::system) first_turn = 1;
  if (first_turn == messages.size()) {
    throw Error(ErrorCode::empty_conversation,
                "conversation has a system message but no turns");
  }
  for (std::size_t i = first_turn; i < messages.size(); ++i) {
    const Role expected = (i - first_turn) % 2 == 0 ? Role::user : Role::assistant;
    if (messages[i].role != expected) {
      throw Error(ErrorCode::invalid_conversation,
                  "message " + std::to_string(i) + " has role " +
                      std::string(to_string(messages[i].role)) + ", expected " +
                      std::string(to_string(expected)));
    }
  }
}

const ChatMessage* Conversation::system_message() const noexcept {
  if (!messages.empty() && messages.front().role == Role::system) return &messages.front();
  return nullptr;
}

const ChatMessage* Conversation::last_user_message() const noexcept {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::user) return &*it;
  }
  return nullptr;
}

}  // namespace llmgate
