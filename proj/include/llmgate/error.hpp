#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace llmgate {

enum class ErrorCode {
  // registry
  duplicate_name,
  duplicate_id,
  unknown_template,
  unknown_backend,
  invalid_descriptor,
  invalid_template,
  unknown_model,
  empty_conversation,
  invalid_conversation,
  // backends
  invalid_binding,
  invalid_params,
  non_mock_binding,
  // fanout
  invalid_request,
  unknown_fanout,
  // documents
  unsupported_format,
  extractor_failure,
  empty_input,
  invalid_parameters,
  invalid_budget,
  budget_too_small,
  unknown_document,
  // evaluation
  unknown_scorer,
  remote_scorer_unreachable,
  self_vote,
  model_not_in_fanout,
  // persistence
  storage_failure,
  unknown_session,
  corrupt_log,
  session_locked,
  // configuration
  bad_config,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure the library reports carries one of the codes above; callers
/// (gateway, CLI) map codes onto HTTP statuses and exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace llmgate
