#include "ergo/transcript.hpp"

#include <sstream>

namespace ergo::transcript {

namespace {

constexpr const char* kBulletDirective =
    "Complete the task using all of the points listed below.";

std::string join_shards(const std::vector<std::string>& shards) {
  std::string out;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    if (i > 0) out += "\n";
    out += shards[i];
  }
  return out;
}

}  // namespace

ConversationState::ConversationState() { branches_.emplace_back(); }

ConversationState::ConversationState(const std::string& system_prompt)
    : system_prompt_(system_prompt) {
  branches_.emplace_back();
  Message preamble;
  preamble.role = Role::System;
  preamble.content = system_prompt;
  preamble.turn_index = 0;
  branches_[0].push_back(std::move(preamble));
}

void ConversationState::append_shard(const std::string& shard) {
  if (shard.empty()) {
    throw ConfigError("cannot append an empty shard");
  }
  shard_texts_.push_back(shard);
  Message message;
  message.role = Role::User;
  message.content = shard;
  message.turn_index = static_cast<int>(shard_texts_.size());
  branches_[active_].push_back(std::move(message));
}

void ConversationState::record_assistant_turn(const std::string& text,
                                              entropy::TurnStats stats,
                                              int prompt_token_count) {
  Message message;
  message.role = Role::Assistant;
  message.content = text;
  message.turn_index = completed_turns_ + 1;
  message.stats = std::move(stats);
  branches_[active_].push_back(std::move(message));
  ++completed_turns_;
  ++forward_pass_count_;
  cumulative_prompt_tokens_ += prompt_token_count;
}

std::string ConversationState::build_rewrite_request(
    const ResetOptions& options) const {
  if (shard_texts_.empty()) {
    throw ConfigError("cannot build a rewrite request before any user shard");
  }
  return options.rewrite_template + "\n\n" + join_shards(shard_texts_);
}

ResetOutcome ConversationState::execute_reset(
    backend::ModelBackend& backend, const backend::GenerationSettings& settings,
    double delta_at_trigger, const ResetOptions& options) {
  const std::string rewrite_request = build_rewrite_request(options);
  const int trigger_turn = completed_turns_;

  // Step I: consolidate the shards in a standalone single-turn call, away
  // from the degraded transcript.
  backend::GenerationResult rewrite_result;
  try {
    auto session = backend.fresh_session();
    backend::GenerationRequest request;
    Message prompt;
    prompt.role = Role::User;
    prompt.content = rewrite_request;
    prompt.turn_index = trigger_turn;
    request.messages.push_back(std::move(prompt));
    request.settings = settings;
    rewrite_result = session->generate(request);
  } catch (const backend::BackendError& err) {
    throw ResetError(ResetError::Step::Rewrite, err.what());
  }

  // Step II: fresh, memoryless session answers the rewritten prompt.
  backend::GenerationResult optimized_result;
  try {
    auto session = backend.fresh_session();
    backend::GenerationRequest request;
    if (system_prompt_.has_value()) {
      Message preamble;
      preamble.role = Role::System;
      preamble.content = *system_prompt_;
      preamble.turn_index = 0;
      request.messages.push_back(std::move(preamble));
    }
    Message prompt;
    prompt.role = Role::User;
    prompt.content = rewrite_result.text;
    prompt.turn_index = trigger_turn;
    request.messages.push_back(std::move(prompt));
    request.settings = settings;
    optimized_result = session->generate(request);
  } catch (const backend::BackendError& err) {
    throw ResetError(ResetError::Step::Optimize, err.what());
  }

  // Step III: both calls succeeded; only now mutate state.
  int prev_token_count = 0;
  if (const auto prev_stats = last_assistant_stats()) {
    prev_token_count = prev_stats->token_count;
  }

  std::vector<Message> branch;
  if (system_prompt_.has_value()) {
    Message preamble;
    preamble.role = Role::System;
    preamble.content = *system_prompt_;
    preamble.turn_index = 0;
    branch.push_back(std::move(preamble));
  }
  Message rewritten;
  rewritten.role = Role::User;
  rewritten.content = rewrite_result.text;
  rewritten.turn_index = trigger_turn;
  branch.push_back(std::move(rewritten));
  Message optimized;
  optimized.role = Role::Assistant;
  optimized.content = optimized_result.text;
  optimized.turn_index = trigger_turn;
  optimized.stats = entropy::turn_stats(optimized_result.tokens, prev_token_count,
                                        options.renormalize);
  branch.push_back(std::move(optimized));

  branches_.push_back(std::move(branch));
  active_ = branches_.size() - 1;
  forward_pass_count_ += 2;
  cumulative_prompt_tokens_ +=
      rewrite_result.prompt_token_count + optimized_result.prompt_token_count;

  ResetOutcome outcome;
  outcome.trigger_turn = trigger_turn;
  outcome.rewritten_prompt = rewrite_result.text;
  outcome.optimized_response = optimized_result.text;
  outcome.delta_at_trigger = delta_at_trigger;
  reset_events_.push_back(outcome);
  return outcome;
}

std::vector<Message> ConversationState::assemble_prompt_messages(
    policy::AssemblyMode mode) const {
  const std::vector<Message>& stored = branches_[active_];
  switch (mode) {
    case policy::AssemblyMode::Plain:
      return stored;
    case policy::AssemblyMode::FullBullets: {
      std::vector<Message> out;
      if (system_prompt_.has_value()) {
        out.push_back(stored.at(0));
      }
      std::string content = kBulletDirective;
      for (const auto& shard : shard_texts_) {
        content += "\n- " + shard;
      }
      Message bullets;
      bullets.role = Role::User;
      bullets.content = std::move(content);
      bullets.turn_index = 1;
      out.push_back(std::move(bullets));
      return out;
    }
    case policy::AssemblyMode::Snowball: {
      std::vector<Message> out = stored;
      if (out.empty() || out.back().role != Role::User) {
        throw ConfigError("snowball assembly requires a trailing user message");
      }
      out.back().content = join_shards(shard_texts_);
      return out;
    }
    case policy::AssemblyMode::RecapFinal: {
      std::vector<Message> out = stored;
      if (out.empty() || out.back().role != Role::User) {
        throw ConfigError("recap assembly requires a trailing user message");
      }
      if (shard_texts_.size() > 1) {
        std::vector<std::string> priors(shard_texts_.begin(),
                                        shard_texts_.end() - 1);
        out.back().content += "\n" + join_shards(priors);
      }
      return out;
    }
  }
  throw ConfigError("unknown assembly mode");
}

std::optional<entropy::TurnStats> ConversationState::last_assistant_stats() const {
  const std::vector<Message>& messages = branches_[active_];
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::Assistant && it->stats.has_value()) {
      return it->stats;
    }
  }
  return std::nullopt;
}

}  // namespace ergo::transcript
