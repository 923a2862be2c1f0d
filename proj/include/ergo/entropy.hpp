#pragma once

/**
 * @file entropy.hpp
 * @brief Token-level Shannon entropy over next-token candidate distributions.
 *
 * Everything here is computed in nats (natural log), matching the log
 * probabilities returned by chat-completion APIs.
 *
 * A backend reports, for every generated token, the log probabilities of the
 * top-k candidate tokens at that position. From those we derive:
 *  - per-position entropy H_i = -sum p * ln p over the candidate set,
 *  - the mean entropy of a whole assistant turn,
 *  - the turn-over-turn entropy delta that drives the reset policy.
 *
 * When a backend exposes only the top-k candidates (k = 20 for hosted APIs),
 * the retained probability mass is below 1 and the raw entropy underestimates
 * the model's true uncertainty. The `renormalize` flag rescales the retained
 * mass to 1 before computing entropy; the default is to compute over the
 * retained mass as-is.
 */

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ergo/error.hpp"

namespace ergo::entropy {

class InvalidDistributionError : public Error {
 public:
  using Error::Error;
};

/// Candidate distribution for one generated token position.
///
/// Candidates are (token text, logprob) pairs sorted non-increasing by
/// logprob, each logprob <= 0. `truncated` marks distributions cut to the
/// backend's top-k (retained mass may be < 1).
struct TokenLogprobs {
  std::string chosen_token;
  std::vector<std::pair<std::string, double>> candidates;
  bool truncated = false;

  /// Throws InvalidDistributionError unless all invariants hold:
  /// non-empty, sorted non-increasing, logprobs <= 0, mass <= 1 + 1e-6.
  void validate() const;

  /// Sum of exp(logprob) over candidates.
  double retained_mass() const;
};

/// Per-assistant-turn entropy record.
///
/// `mean_entropy` is empty for a turn that produced no tokens; an empty turn
/// never participates in a delta (see entropy_delta).
struct TurnStats {
  std::vector<double> per_token_entropy;
  std::optional<double> mean_entropy;
  int token_count = 0;
  int length_delta = 0;  ///< token_count minus the previous turn's count
};

/// Signed change in mean turn entropy between consecutive assistant turns.
struct EntropyDelta {
  double value = 0.0;  ///< nats; positive = uncertainty rose
  int turn_index = 2;  ///< turn the delta belongs to; always >= 2
};

/// Shannon entropy of one candidate distribution, in nats.
///
/// With renormalize=false the entropy is computed over the retained mass
/// as-is; with renormalize=true probabilities are first rescaled to sum to 1.
/// Zero-probability candidates (logprob = -inf) contribute nothing (the
/// p*ln p -> 0 limit). Result is always >= 0.
///
/// Throws InvalidDistributionError when the distribution violates its
/// invariants (in particular, an empty candidate list).
double token_entropy(const TokenLogprobs& dist, bool renormalize);

/// Aggregates per-token entropies of one assistant turn.
///
/// An empty token list is legal and yields token_count = 0 with an empty
/// mean_entropy. length_delta is token count minus prev_token_count.
TurnStats turn_stats(std::span<const TokenLogprobs> tokens, int prev_token_count,
                     bool renormalize);

/// Delta of mean entropy between two consecutive turns.
///
/// Returns std::nullopt when either turn has no tokens (undefined mean);
/// callers treat an undefined delta as "no signal" and never reset on it.
std::optional<EntropyDelta> entropy_delta(const TurnStats& prev, const TurnStats& curr,
                                          int turn_index);

}  // namespace ergo::entropy
