#include "llmgate/registry.hpp"

#include <cmath>
#include <sstream>

#include "llmgate/error.hpp"

namespace llmgate {

namespace {

constexpr std::string_view kRoleToken = "{role_token}";
constexpr std::string_view kContent = "{content}";
constexpr std::string_view kSystem = "{system}";

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Single pass so placeholder text inside `content` is never re-expanded.
std::string apply_turn_format(std::string_view format, std::string_view role_token,
                              std::string_view content) {
  std::string out;
  out.reserve(format.size() + role_token.size() + content.size());
  std::size_t i = 0;
  while (i < format.size()) {
    if (format.substr(i).starts_with(kRoleToken)) {
      out.append(role_token);
      i += kRoleToken.size();
    } else if (format.substr(i).starts_with(kContent)) {
      out.append(content);
      i += kContent.size();
    } else {
      out.push_back(format[i++]);
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Family family) noexcept {
  switch (family) {
    case Family::llama2_chat: return "llama2-chat";
    case Family::vicuna: return "vicuna";
    case Family::falcon_instruct: return "falcon-instruct";
    case Family::mpt: return "mpt";
    case Family::gpt_neox: return "gpt-neox";
    case Family::openai_compat: return "openai-compat";
    case Family::mock: return "mock";
    case Family::generic: return "generic";
  }
  return "generic";
}

std::optional<Family> family_from_string(std::string_view name) noexcept {
  for (auto f : {Family::llama2_chat, Family::vicuna, Family::falcon_instruct, Family::mpt,
                 Family::gpt_neox, Family::openai_compat, Family::mock, Family::generic}) {
    if (to_string(f) == name) return f;
  }
  return std::nullopt;
}

void PromptTemplate::validate(bool require_stop_sequences) const {
  if (id.empty()) throw Error(ErrorCode::invalid_template, "template id is empty");
  if (count_occurrences(turn_format, kRoleToken) != 1 || count_occurrences(turn_format, kContent) != 1) {
    throw Error(ErrorCode::invalid_template,
                "template '" + id + "': turn_format must contain {role_token} and {content} exactly once");
  }
  for (auto role : {Role::user, Role::assistant}) {
    if (!role_tokens.contains(role)) {
      throw Error(ErrorCode::invalid_template,
                  "template '" + id + "': missing role token for " + std::string(to_string(role)));
    }
  }
  if (require_stop_sequences && stop_sequences.empty()) {
    throw Error(ErrorCode::invalid_template, "template '" + id + "': stop_sequences must be non-empty");
  }
}

std::string render_with_template(const PromptTemplate& tmpl, const Conversation& conversation) {
  conversation.validate();
  std::string out;
  const ChatMessage* system = conversation.system_message();
  const std::string& system_text = system ? system->content : tmpl.default_system;
  if (!system_text.empty() && !tmpl.system_prefix.empty()) {
    std::string_view prefix = tmpl.system_prefix;
    if (const auto pos = prefix.find(kSystem); pos != std::string_view::npos) {
      out.append(prefix.substr(0, pos));
      out.append(system_text);
      out.append(prefix.substr(pos + kSystem.size()));
    } else {
      out.append(prefix);
    }
  }
  for (const auto& m : conversation.messages) {
    if (m.role == Role::system) continue;
    out += apply_turn_format(tmpl.turn_format, tmpl.role_tokens.at(m.role), m.content);
  }
  out += tmpl.trailing_assistant_cue;
  return out;
}

std::size_t estimate_tokens_with_divisor(std::string_view text, int divisor) noexcept {
  const auto d = static_cast<std::size_t>(divisor < 1 ? 1 : divisor);
  return (text.size() + d - 1) / d;
}

void ModelDescriptor::validate() const {
  if (id.value.empty()) throw Error(ErrorCode::invalid_descriptor, "model id is empty");
  if (name.empty()) throw Error(ErrorCode::invalid_descriptor, "model name is empty");
  if (context_window < 1) {
    throw Error(ErrorCode::invalid_descriptor, "model '" + name + "': context_window must be >= 1");
  }
  if (param_count_b && !(*param_count_b > 0.0)) {
    throw Error(ErrorCode::invalid_descriptor, "model '" + name + "': param_count_b must be > 0");
  }
  if (token_divisor < 1) {
    throw Error(ErrorCode::invalid_descriptor, "model '" + name + "': token_divisor must be >= 1");
  }
  if (template_id.empty()) throw Error(ErrorCode::unknown_template, "model '" + name + "': no template");
  if (backend_id.empty()) throw Error(ErrorCode::unknown_backend, "model '" + name + "': no backend");
}

std::string ModelDescriptor::size_label() const {
  if (!param_count_b) return "?";
  std::ostringstream os;
  os << *param_count_b;
  return os.str();
}

ModelRegistry::ModelRegistry() {
  for (auto& t : builtin_templates()) templates_.emplace(t.id, std::move(t));
}

void ModelRegistry::register_template(PromptTemplate tmpl) {
  tmpl.validate(false);
  std::unique_lock lock(mutex_);
  templates_[tmpl.id] = std::move(tmpl);
}

void ModelRegistry::register_backend(const std::string& backend_id, BackendBinding binding) {
  if (backend_id.empty()) throw Error(ErrorCode::invalid_binding, "backend id is empty");
  binding.validate();
  std::unique_lock lock(mutex_);
  backends_[backend_id] = std::move(binding);
}

void ModelRegistry::check_references(const ModelDescriptor& d) const {
  const auto t = templates_.find(d.template_id);
  if (t == templates_.end()) {
    throw Error(ErrorCode::unknown_template, "model '" + d.name + "': unknown template '" + d.template_id + "'");
  }
  if (d.family != Family::mock && t->second.stop_sequences.empty()) {
    throw Error(ErrorCode::invalid_template,
                "model '" + d.name + "': template '" + d.template_id + "' has no stop sequences");
  }
  if (!backends_.contains(d.backend_id)) {
    throw Error(ErrorCode::unknown_backend, "model '" + d.name + "': unknown backend '" + d.backend_id + "'");
  }
}

ModelId ModelRegistry::register_model(ModelDescriptor descriptor) {
  if (descriptor.id.value.empty()) descriptor.id.value = descriptor.name;
  if (descriptor.served_name.empty()) descriptor.served_name = descriptor.name;
  descriptor.validate();
  ModelId id = descriptor.id;
  std::shared_ptr<const ModelDescriptor> stored;
  {
    std::unique_lock lock(mutex_);
    if (by_name_.contains(descriptor.name)) {
      throw Error(ErrorCode::duplicate_name, "model name '" + descriptor.name + "' already registered");
    }
    if (by_id_.contains(descriptor.id.value)) {
      throw Error(ErrorCode::duplicate_id, "model id '" + descriptor.id.value + "' already registered");
    }
    check_references(descriptor);
    descriptor.version = 1;
    stored = std::make_shared<const ModelDescriptor>(std::move(descriptor));
    by_id_.emplace(stored->id.value, models_.size());
    by_name_.emplace(stored->name, models_.size());
    models_.push_back(stored);
  }
  notify(*stored);
  return id;
}

ModelDescriptor ModelRegistry::update_model(ModelDescriptor descriptor) {
  if (descriptor.served_name.empty()) descriptor.served_name = descriptor.name;
  descriptor.validate();
  std::shared_ptr<const ModelDescriptor> stored;
  {
    std::unique_lock lock(mutex_);
    const auto it = by_id_.find(descriptor.id.value);
    if (it == by_id_.end()) {
      throw Error(ErrorCode::unknown_model, "unknown model id '" + descriptor.id.value + "'");
    }
    const auto& previous = *models_[it->second];
    if (descriptor.name != previous.name) {
      if (by_name_.contains(descriptor.name)) {
        throw Error(ErrorCode::duplicate_name, "model name '" + descriptor.name + "' already registered");
      }
    }
    check_references(descriptor);
    descriptor.version = previous.version + 1;
    const auto index = it->second;
    by_name_.erase(previous.name);
    by_name_.emplace(descriptor.name, index);
    stored = std::make_shared<const ModelDescriptor>(std::move(descriptor));
    models_[index] = stored;
  }
  notify(*stored);
  return *stored;
}

std::optional<ModelDescriptor> ModelRegistry::find(const ModelId& id) const {
  std::shared_lock lock(mutex_);
  const auto it = by_id_.find(id.value);
  if (it == by_id_.end()) return std::nullopt;
  return *models_[it->second];
}

std::optional<ModelDescriptor> ModelRegistry::find_by_name(std::string_view name) const {
  std::shared_lock lock(mutex_);
  const auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return *models_[it->second];
}

ModelDescriptor ModelRegistry::get(const ModelId& id) const {
  auto d = find(id);
  if (!d) throw Error(ErrorCode::unknown_model, "unknown model '" + id.value + "'");
  return *d;
}

ResolvedModel ModelRegistry::resolve(const ModelId& id) const {
  std::shared_lock lock(mutex_);
  const auto it = by_id_.find(id.value);
  if (it == by_id_.end()) throw Error(ErrorCode::unknown_model, "unknown model '" + id.value + "'");
  const auto& d = *models_[it->second];
  return ResolvedModel{d, templates_.at(d.template_id), backends_.at(d.backend_id)};
}

std::optional<PromptTemplate> ModelRegistry::find_template(std::string_view id) const {
  std::shared_lock lock(mutex_);
  const auto it = templates_.find(std::string(id));
  if (it == templates_.end()) return std::nullopt;
  return it->second;
}

std::optional<BackendBinding> ModelRegistry::find_backend(std::string_view id) const {
  std::shared_lock lock(mutex_);
  const auto it = backends_.find(std::string(id));
  if (it == backends_.end()) return std::nullopt;
  return it->second;
}

std::vector<ModelDescriptor> ModelRegistry::models() const {
  std::shared_lock lock(mutex_);
  std::vector<ModelDescriptor> out;
  out.reserve(models_.size());
  for (const auto& m : models_) out.push_back(*m);
  return out;
}

std::size_t ModelRegistry::size() const {
  std::shared_lock lock(mutex_);
  return models_.size();
}

Prompt ModelRegistry::render_prompt(const ModelId& id, const Conversation& conversation) const {
  if (conversation.empty()) throw Error(ErrorCode::empty_conversation, "conversation has no messages");
  const auto resolved = resolve(id);
  Prompt prompt;
  prompt.text = render_with_template(resolved.prompt_template, conversation);
  prompt.messages = conversation.messages;
  return prompt;
}

std::size_t ModelRegistry::estimate_tokens(const ModelId& id, std::string_view text) const {
  return estimate_tokens_with_divisor(text, get(id).token_divisor);
}

std::uint64_t ModelRegistry::on_change(ChangeListener listener) {
  std::lock_guard lock(listeners_mutex_);
  const auto token = next_listener_++;
  listeners_.emplace(token, std::move(listener));
  return token;
}

void ModelRegistry::remove_listener(std::uint64_t token) {
  std::lock_guard lock(listeners_mutex_);
  listeners_.erase(token);
}

void ModelRegistry::notify(const ModelDescriptor& d) {
  std::vector<ChangeListener> snapshot;
  {
    std::lock_guard lock(listeners_mutex_);
    for (const auto& [_, l] : listeners_) snapshot.push_back(l);
  }
  for (const auto& l : snapshot) l(d);
}

std::vector<PromptTemplate> builtin_templates() {
  std::vector<PromptTemplate> t;
  t.push_back({
      .id = "llama2-chat",
      .system_prefix = "[INST] <<SYS>>\n{system}\n<</SYS>>\n\n",
      .default_system = "You are a helpful, respectful and honest assistant.",
      .turn_format = "{content}{role_token}",
      .role_tokens = {{Role::user, " [/INST]"}, {Role::assistant, " </s><s>[INST] "}},
      .stop_sequences = {"</s>", "[INST]"},
      .trailing_assistant_cue = "",
  });
  t.push_back({
      .id = "vicuna",
      .system_prefix = "{system}\n\n",
      .default_system =
          "A chat between a curious user and an artificial intelligence assistant. The assistant "
          "gives helpful, detailed, and polite answers to the user's questions.",
      .turn_format = "{role_token}: {content}\n",
      .role_tokens = {{Role::user, "USER"}, {Role::assistant, "ASSISTANT"}},
      .stop_sequences = {"</s>", "\nUSER:"},
      .trailing_assistant_cue = "ASSISTANT:",
  });
  t.push_back({
      .id = "falcon-instruct",
      .system_prefix = "{system}\n",
      .default_system = "",
      .turn_format = "{role_token}: {content}\n",
      .role_tokens = {{Role::user, "User"}, {Role::assistant, "Assistant"}},
      .stop_sequences = {"<|endoftext|>", "\nUser:"},
      .trailing_assistant_cue = "Assistant:",
  });
  t.push_back({
      .id = "mpt",
      .system_prefix = "<|im_start|>system\n{system}<|im_end|>\n",
      .default_system = "",
      .turn_format = "<|im_start|>{role_token}\n{content}<|im_end|>\n",
      .role_tokens = {{Role::user, "user"}, {Role::assistant, "assistant"}},
      .stop_sequences = {"<|im_end|>", "<|endoftext|>"},
      .trailing_assistant_cue = "<|im_start|>assistant\n",
  });
  t.push_back({
      .id = "gpt-neox",
      .system_prefix = "{system}\n",
      .default_system = "",
      .turn_format = "{role_token}: {content}\n",
      .role_tokens = {{Role::user, "<human>"}, {Role::assistant, "<bot>"}},
      .stop_sequences = {"<human>:", "<|endoftext|>"},
      .trailing_assistant_cue = "<bot>:",
  });
  t.push_back({
      .id = "openai-compat",
      .system_prefix = "system: {system}\n",
      .default_system = "",
      .turn_format = "{role_token}: {content}\n",
      .role_tokens = {{Role::user, "user"}, {Role::assistant, "assistant"}},
      .stop_sequences = {"<|endoftext|>"},
      .trailing_assistant_cue = "assistant:",
  });
  t.push_back({
      .id = "mock",
      .system_prefix = "system: {system}\n",
      .default_system = "",
      .turn_format = "{role_token}: {content}\n",
      .role_tokens = {{Role::user, "user"}, {Role::assistant, "assistant"}},
      .stop_sequences = {},
      .trailing_assistant_cue = "assistant:",
  });
  t.push_back({
      .id = "generic",
      .system_prefix = "{system}\n\n",
      .default_system = "",
      .turn_format = "### {role_token}:\n{content}\n\n",
      .role_tokens = {{Role::user, "Instruction"}, {Role::assistant, "Response"}},
      .stop_sequences = {"### Instruction:"},
      .trailing_assistant_cue = "### Response:\n",
  });
  return t;
}

}  // namespace llmgate
