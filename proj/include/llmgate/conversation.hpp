#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace llmgate {

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;
std::optional<Role> role_from_string(std::string_view name) noexcept;

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Ordered role-tagged turns. At most one system message, first if present;
/// the remaining turns alternate user/assistant starting with user.
struct Conversation {
  std::vector<ChatMessage> messages;

  bool empty() const noexcept { return messages.empty(); }

  /// Throws Error(empty_conversation | invalid_conversation).
  void validate() const;

  const ChatMessage* system_message() const noexcept;
  const ChatMessage* last_user_message() const noexcept;

  bool operator==(const Conversation&) const = default;
};

/// What a backend consumes: the family-rendered prompt string plus the
/// structured turns it was rendered from. Chat-completions servers apply their
/// own template to `messages`; `text` is what token budgets are measured on.
struct Prompt {
  std::string text;
  std::vector<ChatMessage> messages;
};

}  // namespace llmgate
