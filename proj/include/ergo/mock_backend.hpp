#pragma once

/**
 * @file mock_backend.hpp
 * @brief Deterministic scripted backend for tests and offline simulation.
 *
 * A scenario file scripts two independent lanes of generations:
 *
 *  - "turns": consumed, in order, by generate() calls on the root handle
 *    (the main conversation);
 *  - "reset_turns": consumed by generate() calls on fresh_session() handles
 *    (the rewrite reply and the optimized response of each reset, in pairs).
 *
 * Keeping reset traffic in its own lane means scripts stay aligned with the
 * main conversation no matter how many resets a policy fires. Identical
 * scenario plus identical request sequence yields bit-identical results.
 *
 * Scenario JSON shape:
 * {
 *   "name": "spike",
 *   "turns": [
 *     {
 *       "response": "text of the assistant turn",
 *       "tokens": [
 *         {"token": "x", "top_logprobs": [["x", -0.22], ["y", -1.61]]}
 *       ],
 *       "expect_substring": "optional text the last user message must contain",
 *       "prompt_tokens": 12,
 *       "finish_reason": "stop",
 *       "fail": "transport"
 *     }
 *   ],
 *   "reset_turns": [ ... same shape ... ]
 * }
 *
 * "tokens" may be empty (an empty assistant turn). "fail" injects a backend
 * error of the named kind (auth, rate_limit, missing_logprobs, malformed,
 * transport) instead of producing a result; the entry is consumed either way.
 */

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ergo/backend.hpp"

namespace ergo::backend {

struct ScenarioTurn {
  std::optional<std::string> expect_substring;
  std::string response;
  std::vector<entropy::TokenLogprobs> tokens;
  std::optional<int> prompt_tokens;
  std::optional<BackendErrorKind> fail;
  FinishReason finish_reason = FinishReason::Stop;
};

struct MockScenario {
  std::string name;
  std::vector<ScenarioTurn> turns;
  std::vector<ScenarioTurn> reset_turns;

  /// Parses scenario JSON text. Candidate lists are sorted by
  /// non-increasing logprob and validated; malformed input raises a
  /// Scenario-kind BackendError.
  static MockScenario parse(const std::string& json_text);

  /// Reads and parses a scenario file.
  static MockScenario load(const std::string& path);
};

/// Request capture for test introspection.
struct RecordedCall {
  bool fresh_lane = false;
  int script_index = 0;
  GenerationRequest request;
};

class MockBackend final : public ModelBackend {
 public:
  static std::shared_ptr<MockBackend> create(MockScenario scenario);

  GenerationResult generate(const GenerationRequest& request) override;
  std::shared_ptr<ModelBackend> fresh_session() override;

  /// Calls observed so far, across all handles of this scenario instance.
  std::vector<RecordedCall> recorded_calls() const;
  int turns_consumed() const;
  int reset_turns_consumed() const;

 private:
  struct SharedState {
    MockScenario scenario;
    std::size_t turn_cursor = 0;
    std::size_t reset_cursor = 0;
    std::vector<RecordedCall> calls;
    mutable std::mutex mutex;
  };

  MockBackend(std::shared_ptr<SharedState> state, bool fresh_lane)
      : state_(std::move(state)), fresh_lane_(fresh_lane) {}

  std::shared_ptr<SharedState> state_;
  bool fresh_lane_;
};

}  // namespace ergo::backend
