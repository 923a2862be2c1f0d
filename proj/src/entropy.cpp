#include "ergo/entropy.hpp"

#include <cmath>
#include <sstream>

namespace ergo::entropy {

void TokenLogprobs::validate() const {
  if (candidates.empty()) {
    throw InvalidDistributionError("token '" + chosen_token +
                                   "': candidate list is empty");
  }
  double prev = 0.0;
  bool first = true;
  for (const auto& [tok, lp] : candidates) {
    // !(lp <= 0.0) also catches NaN.
    if (!(lp <= 0.0)) {
      std::ostringstream msg;
      msg << "token '" << chosen_token << "': candidate '" << tok
          << "' has logprob " << lp << " (must be <= 0 and not NaN)";
      throw InvalidDistributionError(msg.str());
    }
    if (!first && lp > prev) {
      throw InvalidDistributionError(
          "token '" + chosen_token +
          "': candidates not sorted by non-increasing logprob");
    }
    prev = lp;
    first = false;
  }
  const double mass = retained_mass();
  if (mass > 1.0 + 1e-6) {
    std::ostringstream msg;
    msg << "token '" << chosen_token << "': probability mass " << mass
        << " exceeds 1";
    throw InvalidDistributionError(msg.str());
  }
}

double TokenLogprobs::retained_mass() const {
  double mass = 0.0;
  for (const auto& [tok, lp] : candidates) {
    mass += std::exp(lp);
  }
  return mass;
}

double token_entropy(const TokenLogprobs& dist, bool renormalize) {
  dist.validate();
  double h = 0.0;
  if (renormalize) {
    const double mass = dist.retained_mass();
    if (mass <= 0.0) {
      return 0.0;  // all candidates at -inf; degenerate, no uncertainty signal
    }
    const double log_mass = std::log(mass);
    for (const auto& [tok, lp] : dist.candidates) {
      const double p = std::exp(lp) / mass;
      if (p > 0.0) {
        h -= p * (lp - log_mass);
      }
    }
  } else {
    for (const auto& [tok, lp] : dist.candidates) {
      const double p = std::exp(lp);
      if (p > 0.0) {
        h -= p * lp;
      }
    }
  }
  // Rounding can leave a tiny negative for near-one-hot distributions.
  return h <= 0.0 ? 0.0 : h;
}

TurnStats turn_stats(std::span<const TokenLogprobs> tokens, int prev_token_count,
                     bool renormalize) {
  TurnStats stats;
  stats.per_token_entropy.reserve(tokens.size());
  for (const auto& dist : tokens) {
    stats.per_token_entropy.push_back(token_entropy(dist, renormalize));
  }
  stats.token_count = static_cast<int>(tokens.size());
  stats.length_delta = stats.token_count - prev_token_count;
  if (stats.token_count > 0) {
    double sum = 0.0;
    for (double h : stats.per_token_entropy) {
      sum += h;
    }
    stats.mean_entropy = sum / stats.token_count;
  }
  return stats;
}

std::optional<EntropyDelta> entropy_delta(const TurnStats& prev, const TurnStats& curr,
                                          int turn_index) {
  // Undefined means win over index validation: an empty turn yields "no
  // signal" regardless of where it sits in the conversation.
  if (!prev.mean_entropy.has_value() || !curr.mean_entropy.has_value()) {
    return std::nullopt;
  }
  if (turn_index < 2) {
    throw ConfigError("entropy delta requires turn_index >= 2, got " +
                      std::to_string(turn_index));
  }
  return EntropyDelta{*curr.mean_entropy - *prev.mean_entropy, turn_index};
}

}  // namespace ergo::entropy
