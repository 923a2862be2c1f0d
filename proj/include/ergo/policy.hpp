#pragma once

/**
 * @file policy.hpp
 * @brief Reset decision policies: entropy-triggered resets plus the
 *        comparison strategies they are evaluated against.
 *
 * After every assistant turn the harness asks the active policy whether to
 * continue on the current branch or perform a context reset. Only two
 * policies ever answer "reset": the entropy-threshold policy (reset when the
 * turn-over-turn mean-entropy delta exceeds tau) and the random/interval
 * baselines. The remaining strategies (none_sharded, full_single_turn,
 * snowball, recap) never reset; they differ in how prompts are assembled,
 * which is what AssemblyMode captures.
 */

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>

#include "ergo/entropy.hpp"
#include "ergo/error.hpp"

namespace ergo::policy {

enum class PolicyKind {
  Ergo,            ///< reset when the entropy delta exceeds tau
  NoneSharded,     ///< sharded conversation, never reset
  FullSingleTurn,  ///< whole task as one bullet-list prompt
  Random,          ///< seeded coin flip per turn
  FixedInterval,   ///< reset every N shards
  Snowball,        ///< restate all prior shards every turn
  Recap,           ///< restate all prior shards at the final turn only
};

/// How the user-visible prompt for the next turn is put together.
enum class AssemblyMode { Plain, FullBullets, Snowball, RecapFinal };

std::string to_string(PolicyKind kind);
std::string to_string(AssemblyMode mode);

/// Parses the CLI/config spelling ("ergo", "none_sharded", ...).
/// Throws ConfigError for unknown names.
PolicyKind parse_policy_kind(const std::string& name);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::Ergo;
  double tau = 0.0;          ///< nats; used by the ergo policy
  double probability = 0.2;  ///< per-turn trigger chance; random policy
  int interval = 5;          ///< shards between resets; fixed_interval policy
  std::uint64_t seed = 0;    ///< random policy generator seed

  /// Throws ConfigError unless tau is finite, interval >= 1 and
  /// probability lies in [0, 1].
  void validate() const;
};

struct PolicyDecision {
  enum class Action { Continue, Reset };
  Action action = Action::Continue;
  std::string reason;  ///< non-empty whenever action == Reset
  std::optional<double> delta;
};

/// Deterministic uniform [0, 1) stream for the random policy.
///
/// Draws are derived from raw mt19937_64 output via a fixed bit transform
/// rather than std::uniform_real_distribution, whose mapping is
/// implementation-defined; this keeps decision sequences identical across
/// standard libraries and platforms.
class ResetRng {
 public:
  explicit ResetRng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

/// Decides whether to reset after the assistant turn at turn_index.
///
/// shard_index counts user shards submitted so far (1-based). delta is the
/// entropy delta for this turn, absent for the first assistant turn or after
/// an empty turn; an absent delta never triggers the ergo policy. The random
/// policy consumes exactly one rng draw per call.
///
/// Throws ConfigError when turn_index < 1.
PolicyDecision decide(const PolicyConfig& config, int turn_index, int shard_index,
                      const std::optional<entropy::EntropyDelta>& delta,
                      ResetRng& rng);

/// Assembly mode for the upcoming turn under this policy.
AssemblyMode assembly_mode(const PolicyConfig& config, bool is_final_turn);

/// Calibrated per-model default thresholds (nats), keyed by model id.
const std::map<std::string, double>& default_tau_presets();

}  // namespace ergo::policy
