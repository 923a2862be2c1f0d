#pragma once

/**
 * @file calibrate.hpp
 * @brief Threshold selection: collect an entropy-delta distribution from
 *        baseline sharded runs and pick tau at a chosen percentile.
 *
 * The percentile estimator here (linear interpolation on 1-based rank
 * 1 + (q/100)(n-1)) is the single definition shared with the metrics module,
 * so a threshold calibrated here and an aptitude score computed there use
 * the same arithmetic.
 */

#include <cstdint>
#include <string>
#include <vector>

#include "ergo/backend.hpp"
#include "ergo/error.hpp"

namespace ergo::harness {
struct DatasetRecord;
struct RunOptions;
}  // namespace ergo::harness

namespace ergo::calibrate {

/// Entropy deltas collected from baseline runs, ready for selection.
struct DeltaSample {
  std::vector<double> values;  ///< nats
  std::string source;          ///< dataset id + model id
  int count = 0;               ///< always values.size()

  /// Throws ConfigError when count disagrees with values or any value is
  /// not finite.
  void validate() const;
};

/// Percentile with linear interpolation: sort ascending, take rank
/// 1 + (q/100)(n-1), interpolate between the floor and ceil ranks.
/// Throws ConfigError for an empty sample or q outside [0, 100].
double percentile(std::vector<double> values, double q);

struct ThresholdSelection {
  double tau = 0.0;
  double q = 0.0;
  int n = 0;
};

/// tau = percentile(sample.values, q). Throws ConfigError on an empty or
/// invalid sample.
ThresholdSelection select_threshold(const DeltaSample& sample, double q);

/// Fixed-width histogram over [min, max]; a constant sample collapses to a
/// single bin. edges has one more element than counts.
struct Histogram {
  std::vector<double> edges;
  std::vector<int> counts;
};

Histogram make_histogram(const std::vector<double>& values, int bins = 20);

/// Runs the none_sharded baseline over every record and pools every defined
/// turn-over-turn entropy delta, across `runs` repetitions per record.
///
/// Calibration data must stay disjoint from evaluation data; when
/// `evaluation_ids` is supplied, any overlap with the dataset's record ids
/// is rejected with ConfigError. Backend errors propagate annotated with
/// the record id.
DeltaSample collect_deltas(const std::vector<harness::DatasetRecord>& dataset,
                           backend::ModelBackend& backend, int runs,
                           const harness::RunOptions& options,
                           const std::vector<std::string>* evaluation_ids = nullptr);

}  // namespace ergo::calibrate
