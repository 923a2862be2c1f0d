#include "ergo/http_backend.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace ergo::backend {

namespace {

constexpr int kBackoffCapMs = 4000;

std::string snippet(const std::string& body) {
  constexpr std::size_t kMax = 160;
  if (body.size() <= kMax) return body;
  return body.substr(0, kMax) + "...";
}

}  // namespace

void HttpBackendConfig::validate() const {
  if (base_url.empty()) {
    throw ConfigError("http backend requires a base_url");
  }
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
    throw ConfigError("base_url must start with http:// or https://, got '" +
                      base_url + "'");
  }
  if (timeout_ms < 1) throw ConfigError("timeout_ms must be positive");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (retry_backoff_ms < 0) throw ConfigError("retry_backoff_ms must be >= 0");
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto scheme_end = config_.base_url.find("://") + 3;
  const auto path_start = config_.base_url.find('/', scheme_end);
  if (path_start == std::string::npos) {
    host_ = config_.base_url;
  } else {
    host_ = config_.base_url.substr(0, path_start);
    path_prefix_ = config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') {
      path_prefix_.pop_back();
    }
  }
  if (const char* key = std::getenv("ERGO_API_KEY")) {
    api_key_ = key;
  }
}

std::shared_ptr<HttpBackend> HttpBackend::create(HttpBackendConfig config) {
  return std::shared_ptr<HttpBackend>(new HttpBackend(std::move(config)));
}

std::string HttpBackend::build_payload(const GenerationRequest& request) {
  nlohmann::ordered_json payload;
  payload["model"] = request.settings.model_id;
  payload["messages"] = nlohmann::ordered_json::array();
  for (const auto& message : request.messages) {
    payload["messages"].push_back(
        {{"role", to_string(message.role)}, {"content", message.content}});
  }
  payload["temperature"] = request.settings.temperature;
  payload["logprobs"] = true;
  payload["top_logprobs"] = request.settings.top_logprobs;
  payload["max_tokens"] = request.settings.max_tokens;
  return payload.dump();
}

GenerationResult HttpBackend::parse_response(const std::string& body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& err) {
    throw BackendError(BackendErrorKind::MalformedPayload,
                       std::string("response is not valid JSON: ") + err.what());
  }
  try {
    if (!doc.contains("choices") || !doc.at("choices").is_array() ||
        doc.at("choices").empty()) {
      throw BackendError(BackendErrorKind::MalformedPayload,
                         "response has no choices: " + snippet(body));
    }
    const auto& choice = doc.at("choices").at(0);
    GenerationResult result;
    result.text = choice.at("message").at("content").get<std::string>();
    result.finish_reason =
        parse_finish_reason(choice.value("finish_reason", "stop"));

    if (!choice.contains("logprobs") || choice.at("logprobs").is_null() ||
        !choice.at("logprobs").contains("content")) {
      throw BackendError(BackendErrorKind::MissingLogprobs,
                         "response carries no logprob block although "
                         "logprobs were requested");
    }
    for (const auto& token : choice.at("logprobs").at("content")) {
      entropy::TokenLogprobs dist;
      dist.chosen_token = token.at("token").get<std::string>();
      if (!token.contains("top_logprobs") || token.at("top_logprobs").empty()) {
        throw BackendError(BackendErrorKind::MissingLogprobs,
                           "token '" + dist.chosen_token +
                               "' carries no top_logprobs candidates");
      }
      for (const auto& candidate : token.at("top_logprobs")) {
        dist.candidates.emplace_back(candidate.at("token").get<std::string>(),
                                     candidate.at("logprob").get<double>());
      }
      std::stable_sort(
          dist.candidates.begin(), dist.candidates.end(),
          [](const auto& a, const auto& b) { return a.second > b.second; });
      dist.truncated = dist.retained_mass() < 1.0 - 1e-9;
      try {
        dist.validate();
      } catch (const entropy::InvalidDistributionError& err) {
        throw BackendError(BackendErrorKind::MalformedPayload, err.what());
      }
      result.tokens.push_back(std::move(dist));
    }
    result.completion_token_count = static_cast<int>(result.tokens.size());
    if (doc.contains("usage")) {
      result.prompt_token_count = doc.at("usage").value("prompt_tokens", 0);
    }
    return result;
  } catch (const nlohmann::json::exception& err) {
    throw BackendError(BackendErrorKind::MalformedPayload,
                       std::string("unexpected response shape: ") + err.what() +
                           " in " + snippet(body));
  }
}

GenerationResult HttpBackend::generate(const GenerationRequest& request) {
  request.settings.validate(top_logprobs_cap());
  if (request.messages.empty()) {
    throw ConfigError("generation request has no messages");
  }
  const std::string payload = build_payload(request);
  const std::string path = path_prefix_ + "/chat/completions";

  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }

  std::string last_failure = "no attempt made";
  BackendErrorKind last_kind = BackendErrorKind::Transport;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const long long backoff = std::min<long long>(
          static_cast<long long>(config_.retry_backoff_ms) << (attempt - 1),
          kBackoffCapMs);
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    }
    httplib::Client client(host_);
    client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
    client.set_read_timeout(config_.timeout_ms / 1000,
                            (config_.timeout_ms % 1000) * 1000);
    auto response = client.Post(path, headers, payload, "application/json");
    if (!response) {
      last_kind = BackendErrorKind::Transport;
      last_failure = "transport failure: " + httplib::to_string(response.error());
      continue;
    }
    if (response->status == 200) {
      return parse_response(response->body);
    }
    if (response->status == 401 || response->status == 403) {
      throw BackendError(BackendErrorKind::Auth,
                         "server rejected credentials (status " +
                             std::to_string(response->status) + ")");
    }
    if (response->status == 429) {
      last_kind = BackendErrorKind::RateLimit;
      last_failure = "rate limited (status 429)";
      continue;
    }
    if (response->status >= 500) {
      last_kind = BackendErrorKind::Transport;
      last_failure = "server error (status " + std::to_string(response->status) +
                     "): " + snippet(response->body);
      continue;
    }
    throw BackendError(BackendErrorKind::MalformedPayload,
                       "server rejected the request (status " +
                           std::to_string(response->status) +
                           "): " + snippet(response->body));
  }
  throw BackendError(last_kind, last_failure + " after " +
                                    std::to_string(config_.max_retries + 1) +
                                    " attempts");
}

std::shared_ptr<ModelBackend> HttpBackend::fresh_session() {
  // Stateless wire protocol: the handle itself carries no history.
  return shared_from_this();
}

}  // namespace ergo::backend
