#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "llmgate/backend.hpp"
#include "llmgate/conversation.hpp"

namespace llmgate {

enum class Family { llama2_chat, vicuna, falcon_instruct, mpt, gpt_neox, openai_compat, mock, generic };

std::string_view to_string(Family family) noexcept;
std::optional<Family> family_from_string(std::string_view name) noexcept;

struct ModelId {
  std::string value;

  auto operator<=>(const ModelId&) const = default;
  bool operator==(const ModelId&) const = default;
};

/// Family-specific wrapping of turns into the raw string a model consumes.
///
/// Rendering: `system_prefix` with "{system}" replaced by the system message
/// (or `default_system` when the conversation has none; the prefix is omitted
/// when both are empty), then every non-system turn through `turn_format`
/// with "{role_token}" and "{content}" substituted, then
/// `trailing_assistant_cue`.
struct PromptTemplate {
  std::string id;
  std::string system_prefix;
  std::string default_system;
  std::string turn_format;
  std::map<Role, std::string> role_tokens;
  std::vector<std::string> stop_sequences;
  std::string trailing_assistant_cue;

  /// Throws Error(invalid_template).
  void validate(bool require_stop_sequences) const;
};

std::string render_with_template(const PromptTemplate& tmpl, const Conversation& conversation);

/// ceil(bytes / divisor).
std::size_t estimate_tokens_with_divisor(std::string_view text, int divisor) noexcept;

struct ModelDescriptor {
  ModelId id;
  std::string name;
  Family family = Family::generic;
  std::optional<double> param_count_b;
  int context_window = 2048;
  std::string template_id;
  std::string backend_id;
  int token_divisor = 4;
  std::string served_name;  // model name sent to remote servers; defaults to name
  std::uint32_t version = 1;

  void validate() const;
  /// "7", "40", "?" for unknown.
  std::string size_label() const;
};

/// Everything needed to run a model, copied out of the registry.
struct ResolvedModel {
  ModelDescriptor descriptor;
  PromptTemplate prompt_template;
  BackendBinding backend;
};

/// Catalogue of models, templates and backend bindings.
///
/// Read-mostly: lookups take a shared lock, registrations an exclusive one.
/// Descriptors are immutable once registered; update_model stores a new
/// version and leaves copies held elsewhere untouched.
class ModelRegistry {
 public:
  using ChangeListener = std::function<void(const ModelDescriptor&)>;

  ModelRegistry();  // with the built-in family templates registered

  void register_template(PromptTemplate tmpl);
  void register_backend(const std::string& backend_id, BackendBinding binding);
  ModelId register_model(ModelDescriptor descriptor);
  ModelDescriptor update_model(ModelDescriptor descriptor);

  std::optional<ModelDescriptor> find(const ModelId& id) const;
  std::optional<ModelDescriptor> find_by_name(std::string_view name) const;
  ModelDescriptor get(const ModelId& id) const;  // throws unknown_model
  ResolvedModel resolve(const ModelId& id) const;
  std::optional<PromptTemplate> find_template(std::string_view id) const;
  std::optional<BackendBinding> find_backend(std::string_view id) const;
  std::vector<ModelDescriptor> models() const;  // registration order
  std::size_t size() const;

  Prompt render_prompt(const ModelId& id, const Conversation& conversation) const;
  std::size_t estimate_tokens(const ModelId& id, std::string_view text) const;

  /// Listener runs synchronously after each registration or update.
  std::uint64_t on_change(ChangeListener listener);
  void remove_listener(std::uint64_t token);

 private:
  void check_references(const ModelDescriptor& d) const;
  void notify(const ModelDescriptor& d);

  mutable std::shared_mutex mutex_;
  std::vector<std::shared_ptr<const ModelDescriptor>> models_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<std::string, PromptTemplate> templates_;
  std::unordered_map<std::string, BackendBinding> backends_;

  std::mutex listeners_mutex_;
  std::map<std::uint64_t, ChangeListener> listeners_;
  std::uint64_t next_listener_ = 1;
};

/// Templates shipped for each family; ids equal the family names.
std::vector<PromptTemplate> builtin_templates();

/// Parses a catalogue document (JSON) into the registry. Unknown families fall
/// back to the generic instruct template with a logged warning.
void load_catalogue(ModelRegistry& registry, std::string_view catalogue_json);
void load_catalogue_file(ModelRegistry& registry, const std::filesystem::path& path);

/// The seed catalogue of popular pre-trained model families, all bound to
/// local mock backends.
std::string_view default_catalogue_json() noexcept;

}  // namespace llmgate
