#pragma once

/**
 * @file backend.hpp
 * @brief Uniform model-backend abstraction over chat-completion generation.
 *
 * Every backend speaks the same contract: given a message list it returns
 * the generated text together with per-token top-k candidate logprobs, which
 * the entropy pipeline consumes downstream. Two implementations exist: an
 * HTTP client for chat-completions endpoints (http_backend.hpp) and a
 * deterministic scripted mock for tests and offline simulation
 * (mock_backend.hpp).
 */

#include <memory>
#include <string>
#include <vector>

#include "ergo/entropy.hpp"
#include "ergo/error.hpp"
#include "ergo/message.hpp"

namespace ergo::backend {

/// Request knobs that stay constant across the turns of a run.
struct GenerationSettings {
  std::string model_id;
  double temperature = 1.0;
  int top_logprobs = 20;
  int max_tokens = 1024;

  /// Throws ConfigError unless temperature >= 0 and
  /// 1 <= top_logprobs <= cap.
  void validate(int top_logprobs_cap) const;
};

struct GenerationRequest {
  std::vector<Message> messages;
  GenerationSettings settings;
};

enum class FinishReason { Stop, Length, ContentFilter, Other };

std::string to_string(FinishReason reason);
FinishReason parse_finish_reason(const std::string& name);

struct GenerationResult {
  std::string text;
  std::vector<entropy::TokenLogprobs> tokens;
  FinishReason finish_reason = FinishReason::Stop;
  int prompt_token_count = 0;
  int completion_token_count = 0;  ///< always tokens.size() when logprobs flow
};

/// Failure taxonomy shared by all backends. Each kind is distinguishable so
/// callers can decide between retrying, aborting a reset, or failing a run.
enum class BackendErrorKind {
  Auth,
  RateLimit,
  MissingLogprobs,
  MalformedPayload,
  Transport,
  Scenario,  ///< mock script violated or exhausted
};

std::string to_string(BackendErrorKind kind);

class BackendError : public Error {
 public:
  BackendError(BackendErrorKind kind, const std::string& message)
      : Error(to_string(kind) + ": " + message), kind_(kind) {}

  BackendErrorKind kind() const { return kind_; }

 private:
  BackendErrorKind kind_;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  /// Generates one assistant turn. Never silently drops logprobs: when the
  /// response carries none, a MissingLogprobs error is thrown.
  virtual GenerationResult generate(const GenerationRequest& request) = 0;

  /// Returns a handle with no conversational memory. Stateless HTTP
  /// backends hand back themselves; the mock switches script lanes so reset
  /// traffic cannot disturb the main conversation script.
  virtual std::shared_ptr<ModelBackend> fresh_session() = 0;

  /// Largest top_logprobs value this backend can serve.
  virtual int top_logprobs_cap() const { return 20; }
};

}  // namespace ergo::backend
