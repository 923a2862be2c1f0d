#include "ergo/backend.hpp"

#include <sstream>

namespace ergo {

std::string to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  throw ConfigError("unhandled role");
}

}  // namespace ergo

namespace ergo::backend {

void GenerationSettings::validate(int top_logprobs_cap) const {
  if (model_id.empty()) {
    throw ConfigError("model_id must not be empty");
  }
  if (!(temperature >= 0.0)) {
    std::ostringstream msg;
    msg << "temperature must be >= 0, got " << temperature;
    throw ConfigError(msg.str());
  }
  if (top_logprobs < 1 || top_logprobs > top_logprobs_cap) {
    std::ostringstream msg;
    msg << "top_logprobs must lie in [1, " << top_logprobs_cap << "], got "
        << top_logprobs;
    throw ConfigError(msg.str());
  }
  if (max_tokens < 1) {
    throw ConfigError("max_tokens must be >= 1, got " +
                      std::to_string(max_tokens));
  }
}

std::string to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::ContentFilter: return "content_filter";
    case FinishReason::Other: return "other";
  }
  throw ConfigError("unhandled finish reason");
}

FinishReason parse_finish_reason(const std::string& name) {
  if (name == "stop") return FinishReason::Stop;
  if (name == "length") return FinishReason::Length;
  if (name == "content_filter") return FinishReason::ContentFilter;
  return FinishReason::Other;
}

std::string to_string(BackendErrorKind kind) {
  switch (kind) {
    case BackendErrorKind::Auth: return "auth error";
    case BackendErrorKind::RateLimit: return "rate limit";
    case BackendErrorKind::MissingLogprobs: return "missing logprobs";
    case BackendErrorKind::MalformedPayload: return "malformed payload";
    case BackendErrorKind::Transport: return "transport error";
    case BackendErrorKind::Scenario: return "scenario error";
  }
  return "backend error";
}

}  // namespace ergo::backend
