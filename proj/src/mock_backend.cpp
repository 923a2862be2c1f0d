#include "ergo/mock_backend.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ergo::backend {

namespace {

BackendErrorKind parse_fail_kind(const std::string& name) {
  if (name == "auth") return BackendErrorKind::Auth;
  if (name == "rate_limit") return BackendErrorKind::RateLimit;
  if (name == "missing_logprobs") return BackendErrorKind::MissingLogprobs;
  if (name == "malformed") return BackendErrorKind::MalformedPayload;
  if (name == "transport") return BackendErrorKind::Transport;
  throw BackendError(BackendErrorKind::Scenario,
                     "unknown fail kind '" + name + "'");
}

ScenarioTurn parse_turn(const nlohmann::json& doc, const std::string& lane,
                        std::size_t index) {
  const std::string where = lane + "[" + std::to_string(index) + "]";
  if (!doc.is_object() || !doc.contains("response")) {
    throw BackendError(BackendErrorKind::Scenario,
                       where + ": entry must be an object with a 'response'");
  }
  ScenarioTurn turn;
  turn.response = doc.at("response").get<std::string>();
  if (doc.contains("expect_substring")) {
    turn.expect_substring = doc.at("expect_substring").get<std::string>();
  }
  if (doc.contains("prompt_tokens")) {
    turn.prompt_tokens = doc.at("prompt_tokens").get<int>();
  }
  if (doc.contains("fail")) {
    turn.fail = parse_fail_kind(doc.at("fail").get<std::string>());
  }
  if (doc.contains("finish_reason")) {
    turn.finish_reason =
        parse_finish_reason(doc.at("finish_reason").get<std::string>());
  }
  for (const auto& tok : doc.value("tokens", nlohmann::json::array())) {
    entropy::TokenLogprobs dist;
    dist.chosen_token = tok.at("token").get<std::string>();
    for (const auto& pair : tok.at("top_logprobs")) {
      dist.candidates.emplace_back(pair.at(0).get<std::string>(),
                                   pair.at(1).get<double>());
    }
    std::stable_sort(dist.candidates.begin(), dist.candidates.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    dist.truncated = tok.value("truncated", false);
    try {
      dist.validate();
    } catch (const entropy::InvalidDistributionError& err) {
      throw BackendError(BackendErrorKind::Scenario,
                         where + ": " + err.what());
    }
    turn.tokens.push_back(std::move(dist));
  }
  return turn;
}

int count_words(const GenerationRequest& request) {
  int count = 0;
  for (const auto& message : request.messages) {
    std::istringstream stream(message.content);
    std::string word;
    while (stream >> word) ++count;
  }
  return count;
}

}  // namespace

MockScenario MockScenario::parse(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& err) {
    throw BackendError(BackendErrorKind::Scenario,
                       std::string("scenario is not valid JSON: ") + err.what());
  }
  try {
    MockScenario scenario;
    scenario.name = doc.value("name", "");
    if (!doc.contains("turns") || !doc.at("turns").is_array()) {
      throw BackendError(BackendErrorKind::Scenario,
                         "scenario requires a 'turns' array");
    }
    std::size_t i = 0;
    for (const auto& turn : doc.at("turns")) {
      scenario.turns.push_back(parse_turn(turn, "turns", i++));
    }
    i = 0;
    for (const auto& turn : doc.value("reset_turns", nlohmann::json::array())) {
      scenario.reset_turns.push_back(parse_turn(turn, "reset_turns", i++));
    }
    return scenario;
  } catch (const nlohmann::json::exception& err) {
    throw BackendError(BackendErrorKind::Scenario,
                       std::string("malformed scenario: ") + err.what());
  }
}

MockScenario MockScenario::load(const std::string& path) {
  std::ifstream file(path);
  if (!file) {
    throw BackendError(BackendErrorKind::Scenario,
                       "cannot open scenario file: " + path);
  }
  std::ostringstream text;
  text << file.rdbuf();
  return parse(text.str());
}

std::shared_ptr<MockBackend> MockBackend::create(MockScenario scenario) {
  auto state = std::make_shared<SharedState>();
  state->scenario = std::move(scenario);
  return std::shared_ptr<MockBackend>(new MockBackend(std::move(state), false));
}

GenerationResult MockBackend::generate(const GenerationRequest& request) {
  std::lock_guard<std::mutex> lock(state_->mutex);
  const auto& lane =
      fresh_lane_ ? state_->scenario.reset_turns : state_->scenario.turns;
  std::size_t& cursor = fresh_lane_ ? state_->reset_cursor : state_->turn_cursor;
  const std::string lane_name = fresh_lane_ ? "reset_turns" : "turns";
  if (cursor >= lane.size()) {
    throw BackendError(BackendErrorKind::Scenario,
                       "scenario '" + state_->scenario.name + "' lane '" +
                           lane_name + "' exhausted after " +
                           std::to_string(lane.size()) + " entries");
  }
  const ScenarioTurn& turn = lane[cursor];
  state_->calls.push_back(
      RecordedCall{fresh_lane_, static_cast<int>(cursor), request});
  ++cursor;  // an entry is consumed even when it scripts a failure

  if (turn.fail.has_value()) {
    throw BackendError(*turn.fail, "scripted failure in scenario '" +
                                       state_->scenario.name + "' at " +
                                       lane_name + "[" +
                                       std::to_string(cursor - 1) + "]");
  }
  if (turn.expect_substring.has_value()) {
    const Message* last_user = nullptr;
    for (const auto& message : request.messages) {
      if (message.role == Role::User) last_user = &message;
    }
    if (last_user == nullptr ||
        last_user->content.find(*turn.expect_substring) == std::string::npos) {
      throw BackendError(
          BackendErrorKind::Scenario,
          "scenario '" + state_->scenario.name + "' " + lane_name + "[" +
              std::to_string(cursor - 1) + "] expected the last user message " +
              "to contain \"" + *turn.expect_substring + "\"");
    }
  }

  GenerationResult result;
  result.text = turn.response;
  result.tokens = turn.tokens;
  result.finish_reason = turn.finish_reason;
  result.prompt_token_count = turn.prompt_tokens.value_or(count_words(request));
  result.completion_token_count = static_cast<int>(result.tokens.size());
  return result;
}

std::shared_ptr<ModelBackend> MockBackend::fresh_session() {
  return std::shared_ptr<ModelBackend>(new MockBackend(state_, true));
}

std::vector<RecordedCall> MockBackend::recorded_calls() const {
  std::lock_guard<std::mutex> lock(state_->mutex);
  return state_->calls;
}

int MockBackend::turns_consumed() const {
  std::lock_guard<std::mutex> lock(state_->mutex);
  return static_cast<int>(state_->turn_cursor);
}

int MockBackend::reset_turns_consumed() const {
  std::lock_guard<std::mutex> lock(state_->mutex);
  return static_cast<int>(state_->reset_cursor);
}

}  // namespace ergo::backend
