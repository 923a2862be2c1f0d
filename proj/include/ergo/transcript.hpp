#pragma once

/**
 * @file transcript.hpp
 * @brief Branch-aware conversation state and the three-step reset protocol.
 *
 * A conversation lives on an ordered list of branches. Normal turns extend
 * the active branch; a reset creates a new branch and moves there:
 *
 *  step I   rewrite all user shards so far into one consolidated prompt
 *           (standalone call to a fresh backend session);
 *  step II  submit the rewritten prompt to another fresh, memoryless
 *           session, producing the optimized response;
 *  step III start a new branch holding exactly [rewritten prompt,
 *           optimized response] and continue the conversation there.
 *
 * Earlier branches are never mutated. Each reset costs two extra forward
 * passes (steps I and II) on top of the one-per-turn baseline, and the
 * optimized response's entropy stats become the baseline for the next
 * turn-over-turn delta.
 *
 * Only user shard text is ever consolidated; assistant output never enters
 * a rewrite request.
 */

#include <optional>
#include <string>
#include <vector>

#include "ergo/backend.hpp"
#include "ergo/entropy.hpp"
#include "ergo/error.hpp"
#include "ergo/message.hpp"
#include "ergo/policy.hpp"

namespace ergo::transcript {

/// Instruction prepended to the collected shards in a rewrite request.
/// Versioned so run logs can attribute outputs to the exact wording used.
inline constexpr const char* kDefaultRewriteTemplate =
    "Rewrite the following user messages into a single, fully-specified "
    "prompt that preserves all task details and constraints. Output only the "
    "rewritten prompt.";
inline constexpr const char* kDefaultTemplateVersion = "v1";

/// A reset failed at a specific protocol step; conversation state is
/// unchanged when this is thrown.
class ResetError : public Error {
 public:
  enum class Step { Rewrite, Optimize };

  ResetError(Step step, const std::string& message)
      : Error(std::string("reset failed during ") +
              (step == Step::Rewrite ? "rewrite (step I)"
                                     : "optimized response (step II)") +
              ": " + message),
        step_(step) {}

  Step step() const { return step_; }

 private:
  Step step_;
};

struct ResetOutcome {
  int trigger_turn = 0;            ///< assistant turn whose delta fired
  std::string rewritten_prompt;    ///< step I output, first message of the new branch
  std::string optimized_response;  ///< step II output
  double delta_at_trigger = 0.0;
};

struct ResetOptions {
  std::string rewrite_template = kDefaultRewriteTemplate;
  std::string template_version = kDefaultTemplateVersion;
  bool renormalize = false;  ///< entropy mode for the optimized response's stats
};

class ConversationState {
 public:
  ConversationState();
  explicit ConversationState(const std::string& system_prompt);

  /// Appends a user shard to the active branch. Rejects empty shards.
  void append_shard(const std::string& shard);

  /// Records a completed assistant turn on the active branch: one forward
  /// pass, prompt-token accounting, and the turn's entropy stats.
  void record_assistant_turn(const std::string& text, entropy::TurnStats stats,
                             int prompt_token_count);

  /// Builds the step I meta-prompt: rewrite template plus every user shard
  /// submitted so far, verbatim and in order. Throws ConfigError when no
  /// shard has been submitted yet.
  std::string build_rewrite_request(const ResetOptions& options) const;

  /// Runs the full reset protocol against `backend`. On success the new
  /// branch is active and the outcome is recorded and returned. On backend
  /// failure a ResetError identifying the failing step is thrown and no
  /// state changes.
  ResetOutcome execute_reset(backend::ModelBackend& backend,
                             const backend::GenerationSettings& settings,
                             double delta_at_trigger, const ResetOptions& options);

  /// Messages to send for the next generation, shaped by the assembly mode:
  /// Plain passes the active branch through; FullBullets collapses all
  /// shards into one bullet-list message; Snowball rewrites the trailing
  /// user message to restate every shard; RecapFinal appends all prior
  /// shards to the trailing user message.
  std::vector<Message> assemble_prompt_messages(policy::AssemblyMode mode) const;

  const std::vector<std::vector<Message>>& branches() const { return branches_; }
  const std::vector<Message>& active_messages() const { return branches_[active_]; }
  int active_branch() const { return static_cast<int>(active_); }
  int shards_consumed() const { return static_cast<int>(shard_texts_.size()); }
  const std::vector<std::string>& shard_texts() const { return shard_texts_; }
  const std::vector<ResetOutcome>& reset_events() const { return reset_events_; }
  int forward_pass_count() const { return forward_pass_count_; }
  long long cumulative_prompt_tokens() const { return cumulative_prompt_tokens_; }
  int completed_turns() const { return completed_turns_; }
  const std::optional<std::string>& system_prompt() const { return system_prompt_; }

  /// Stats of the most recent assistant message on the active branch
  /// (after a reset, those of the optimized response).
  std::optional<entropy::TurnStats> last_assistant_stats() const;

 private:
  std::vector<std::vector<Message>> branches_;
  std::size_t active_ = 0;
  std::vector<std::string> shard_texts_;  ///< all user shards, survives resets
  std::vector<ResetOutcome> reset_events_;
  std::optional<std::string> system_prompt_;
  int forward_pass_count_ = 0;
  long long cumulative_prompt_tokens_ = 0;
  int completed_turns_ = 0;
};

}  // namespace ergo::transcript
