#pragma once

/**
 * @file http_backend.hpp
 * @brief Chat-completions HTTP client that requests per-token top-k
 *        logprobs.
 *
 * Speaks the de-facto chat-completions wire format: POST
 * <base_url>/chat/completions with {model, messages, temperature,
 * logprobs: true, top_logprobs, max_tokens}, reading
 * choices[0].message.content and choices[0].logprobs.content[*].top_logprobs
 * from the response. One client covers hosted APIs and local inference
 * servers alike.
 *
 * Transient failures (transport errors, 429, 5xx) are retried with capped
 * exponential backoff; auth failures and malformed payloads are not.
 * Credentials come from the ERGO_API_KEY environment variable, never from
 * config files.
 */

#include <memory>
#include <string>

#include "ergo/backend.hpp"

namespace ergo::backend {

struct HttpBackendConfig {
  std::string base_url;  ///< e.g. "http://localhost:8080/v1"
  int timeout_ms = 30000;
  int max_retries = 3;        ///< retries after the first attempt
  int retry_backoff_ms = 250; ///< doubled per retry, capped at 4s

  void validate() const;
};

class HttpBackend final : public ModelBackend,
                          public std::enable_shared_from_this<HttpBackend> {
 public:
  /// Reads ERGO_API_KEY from the environment; requests carry it as a bearer
  /// token when present.
  static std::shared_ptr<HttpBackend> create(HttpBackendConfig config);

  GenerationResult generate(const GenerationRequest& request) override;

  /// HTTP chat completions are stateless: every request already carries the
  /// full message history, so a fresh session is this same handle.
  std::shared_ptr<ModelBackend> fresh_session() override;

  /// Serializes a request into the wire payload. Message content is passed
  /// through byte for byte.
  static std::string build_payload(const GenerationRequest& request);

  /// Parses a success-response body. Throws BackendError with kind
  /// MissingLogprobs when the logprob block is absent and MalformedPayload
  /// for anything else unusable.
  static GenerationResult parse_response(const std::string& body);

  const HttpBackendConfig& config() const { return config_; }

 private:
  explicit HttpBackend(HttpBackendConfig config);

  HttpBackendConfig config_;
  std::string host_;         ///< scheme://authority
  std::string path_prefix_;  ///< path portion of base_url, possibly empty
  std::string api_key_;
};

}  // namespace ergo::backend
