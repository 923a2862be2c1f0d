#include "ergo/policy.hpp"

#include <cmath>
#include <sstream>

namespace ergo::policy {

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Ergo: return "ergo";
    case PolicyKind::NoneSharded: return "none_sharded";
    case PolicyKind::FullSingleTurn: return "full_single_turn";
    case PolicyKind::Random: return "random";
    case PolicyKind::FixedInterval: return "fixed_interval";
    case PolicyKind::Snowball: return "snowball";
    case PolicyKind::Recap: return "recap";
  }
  throw ConfigError("unhandled policy kind");
}

std::string to_string(AssemblyMode mode) {
  switch (mode) {
    case AssemblyMode::Plain: return "plain";
    case AssemblyMode::FullBullets: return "full_bullets";
    case AssemblyMode::Snowball: return "snowball";
    case AssemblyMode::RecapFinal: return "recap_final";
  }
  throw ConfigError("unhandled assembly mode");
}

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "ergo") return PolicyKind::Ergo;
  if (name == "none_sharded") return PolicyKind::NoneSharded;
  if (name == "full_single_turn") return PolicyKind::FullSingleTurn;
  if (name == "random") return PolicyKind::Random;
  if (name == "fixed_interval") return PolicyKind::FixedInterval;
  if (name == "snowball") return PolicyKind::Snowball;
  if (name == "recap") return PolicyKind::Recap;
  throw ConfigError("unknown policy '" + name +
                    "' (expected one of: ergo, none_sharded, full_single_turn, "
                    "random, fixed_interval, snowball, recap)");
}

void PolicyConfig::validate() const {
  if (!std::isfinite(tau)) {
    throw ConfigError("tau must be finite");
  }
  if (interval < 1) {
    throw ConfigError("reset interval must be >= 1, got " +
                      std::to_string(interval));
  }
  if (!(probability >= 0.0 && probability <= 1.0)) {
    std::ostringstream msg;
    msg << "reset probability must lie in [0, 1], got " << probability;
    throw ConfigError(msg.str());
  }
}

PolicyDecision decide(const PolicyConfig& config, int turn_index, int shard_index,
                      const std::optional<entropy::EntropyDelta>& delta,
                      ResetRng& rng) {
  if (turn_index < 1) {
    throw ConfigError("decide requires turn_index >= 1, got " +
                      std::to_string(turn_index));
  }
  PolicyDecision decision;
  if (delta.has_value()) {
    decision.delta = delta->value;
  }
  switch (config.kind) {
    case PolicyKind::Ergo:
      // Strict inequality: a delta exactly at tau does not trigger. An
      // absent delta (first turn, empty turn) is "no signal", never a reset.
      if (delta.has_value() && delta->value > config.tau) {
        decision.action = PolicyDecision::Action::Reset;
        std::ostringstream reason;
        reason << "entropy delta " << delta->value << " exceeds threshold "
               << config.tau;
        decision.reason = reason.str();
      }
      break;
    case PolicyKind::Random: {
      const double draw = rng.uniform();
      if (draw < config.probability) {
        decision.action = PolicyDecision::Action::Reset;
        std::ostringstream reason;
        reason << "random draw " << draw << " below probability "
               << config.probability;
        decision.reason = reason.str();
      }
      break;
    }
    case PolicyKind::FixedInterval:
      if (shard_index >= 1 && shard_index % config.interval == 0) {
        decision.action = PolicyDecision::Action::Reset;
        decision.reason = "shard " + std::to_string(shard_index) +
                          " is a multiple of interval " +
                          std::to_string(config.interval);
      }
      break;
    case PolicyKind::NoneSharded:
    case PolicyKind::FullSingleTurn:
    case PolicyKind::Snowball:
    case PolicyKind::Recap:
      // These strategies act through prompt assembly, never through resets.
      break;
  }
  return decision;
}

AssemblyMode assembly_mode(const PolicyConfig& config, bool is_final_turn) {
  switch (config.kind) {
    case PolicyKind::FullSingleTurn:
      return AssemblyMode::FullBullets;
    case PolicyKind::Snowball:
      return AssemblyMode::Snowball;
    case PolicyKind::Recap:
      return is_final_turn ? AssemblyMode::RecapFinal : AssemblyMode::Plain;
    default:
      return AssemblyMode::Plain;
  }
}

const std::map<std::string, double>& default_tau_presets() {
  static const std::map<std::string, double> presets = {
      {"phi-4", 0.1},     {"llama3.1-8b", 0.03}, {"gpt-4.1", 0.2},
      {"gpt-4o-mini", 0.2}, {"gpt-4o", 0.3},
  };
  return presets;
}

}  // namespace ergo::policy
