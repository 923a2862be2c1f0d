#pragma once

/**
 * @file metrics.hpp
 * @brief Run scoring, aggregate metrics and the entropy-length correlation
 *        analysis.
 *
 * Scoring follows the binary-correctness rule: the first turn whose answer
 * verifies ends the run with score 100; a run that never verifies scores 0.
 * Aggregates over repeated runs of one instruction are the mean score, the
 * 90th-percentile score ("aptitude") and the spread between the 90th and
 * 10th percentiles ("unreliability"), all using the calibrate module's
 * percentile definition.
 *
 * Correlations come in both Spearman (average-rank ties) and Pearson forms,
 * with two-sided p-values from the t-approximation with n-2 degrees of
 * freedom.
 */

#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ergo/error.hpp"

namespace ergo::metrics {

/// Correlation is undefined for the given input (zero variance in either
/// argument, or zero rank variance for Spearman).
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

struct BinaryScore {
  double score = 0.0;                   ///< 100 on first success, else 0
  std::optional<int> terminated_at;      ///< 1-based turn of first success
};

/// Applies the binary-correctness rule over per-turn outcomes. Evaluation
/// stops at the first success; later outcomes are never inspected, so a
/// lazy range is consumed only up to the terminating turn.
template <typename Range>
BinaryScore score_binary_run(const Range& outcomes) {
  BinaryScore result;
  int index = 0;
  for (auto it = std::begin(outcomes); it != std::end(outcomes); ++it) {
    ++index;
    if (*it) {
      result.score = 100.0;
      result.terminated_at = index;
      return result;
    }
  }
  return result;
}

/// Scores of repeated runs of one instruction.
struct ScoreSet {
  std::vector<double> scores;  ///< each in [0, 100]
  std::string instruction_id;
  int n_runs = 0;  ///< always scores.size()

  void validate() const;
};

struct AggregateMetrics {
  double average = 0.0;        ///< mean score
  double aptitude = 0.0;       ///< 90th percentile
  double unreliability = 0.0;  ///< 90th minus 10th percentile; never negative
};

/// Throws ConfigError on an empty or inconsistent score set.
AggregateMetrics aggregate(const ScoreSet& scores);

enum class CorrelationMethod { Spearman, Pearson };

std::string to_string(CorrelationMethod method);

struct CorrelationResult {
  double coefficient = 0.0;  ///< in [-1, 1]
  double p_value = 1.0;      ///< two-sided
  int n = 0;
  CorrelationMethod method = CorrelationMethod::Pearson;
};

/// Product-moment correlation with a two-sided t-approximation p-value.
/// Requires equal lengths and n >= 3 (ConfigError otherwise); zero variance
/// in either input raises UndefinedCorrelationError.
CorrelationResult pearson(std::span<const double> x, std::span<const double> y);

/// Rank correlation: average ranks for ties, then the product-moment
/// coefficient of the rank vectors. Same preconditions and errors as
/// pearson, with variance checked on the ranks.
CorrelationResult spearman(std::span<const double> x, std::span<const double> y);

/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Regularized incomplete beta function I_x(a, b), continued-fraction
/// evaluation, absolute error below 1e-10 over the parameter ranges used by
/// the p-value computation.
double incomplete_beta_regularized(double a, double b, double x);

/// Two-sided tail probability of Student's t with df degrees of freedom.
double students_t_two_sided_p(double t, double df);

/// One paired observation of the turn-over-turn entropy change and the
/// response-length change.
struct DeltaPair {
  double entropy_delta = 0.0;  ///< nats
  double length_delta = 0.0;   ///< tokens
};

struct EntropyLengthAnalysis {
  CorrelationResult spearman;
  CorrelationResult pearson;
};

/// Pools paired deltas across conversations and correlates them both ways.
/// Requires at least 3 pairs; zero-variance inputs surface as
/// UndefinedCorrelationError rather than a silent zero.
EntropyLengthAnalysis entropy_length_analysis(std::span<const DeltaPair> pairs);

}  // namespace ergo::metrics
