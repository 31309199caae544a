#include "llmgate/error.hpp"

namespace llmgate {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::duplicate_name: return "duplicate-name";
    case ErrorCode::duplicate_id: return "duplicate-id";
    case ErrorCode::unknown_template: return "unknown-template";
    case ErrorCode::unknown_backend: return "unknown-backend";
    case ErrorCode::invalid_descriptor: return "invalid-descriptor";
    case ErrorCode::invalid_template: return "invalid-template";
    case ErrorCode::unknown_model: return "unknown-model";
    case ErrorCode::empty_conversation: return "empty-conversation";
    case ErrorCode::invalid_conversation: return "invalid-conversation";
    case ErrorCode::invalid_binding: return "invalid-binding";
    case ErrorCode::invalid_params: return "invalid-params";
    case ErrorCode::non_mock_binding: return "non-mock-binding";
    case ErrorCode::invalid_request: return "invalid-request";
    case ErrorCode::unknown_fanout: return "unknown-fanout";
    case ErrorCode::unsupported_format: return "unsupported-format";
    case ErrorCode::extractor_failure: return "extractor-failure";
    case ErrorCode::empty_input: return "empty-input";
    case ErrorCode::invalid_parameters: return "invalid-parameters";
    case ErrorCode::invalid_budget: return "invalid-budget";
    case ErrorCode::budget_too_small: return "budget-too-small";
    case ErrorCode::unknown_document: return "unknown-document";
    case ErrorCode::unknown_scorer: return "unknown-scorer";
    case ErrorCode::remote_scorer_unreachable: return "remote-scorer-unreachable";
    case ErrorCode::self_vote: return "self-vote";
    case ErrorCode::model_not_in_fanout: return "model-not-in-fanout";
    case ErrorCode::storage_failure: return "storage-failure";
    case ErrorCode::unknown_session: return "unknown-session";
    case ErrorCode::corrupt_log: return "corrupt-log";
    case ErrorCode::session_locked: return "session-locked";
    case ErrorCode::bad_config: return "bad-config";
  }
  return "unknown";
}

}  // namespace llmgate
