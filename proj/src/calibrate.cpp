#include "ergo/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <unordered_set>

#include "ergo/harness.hpp"

namespace ergo::calibrate {

void DeltaSample::validate() const {
  if (count != static_cast<int>(values.size())) {
    std::ostringstream msg;
    msg << "delta sample count " << count << " disagrees with " << values.size()
        << " stored values";
    throw ConfigError(msg.str());
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ConfigError("delta sample contains a non-finite value");
    }
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) {
    throw ConfigError("percentile of an empty sample");
  }
  if (!(q >= 0.0 && q <= 100.0)) {
    std::ostringstream msg;
    msg << "percentile q must lie in [0, 100], got " << q;
    throw ConfigError(msg.str());
  }
  std::sort(values.begin(), values.end());
  const double rank = 1.0 + (q / 100.0) * (static_cast<double>(values.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(rank);  // floor; rank >= 1
  if (lo >= values.size()) {
    return values.back();
  }
  const double frac = rank - static_cast<double>(lo);
  return values[lo - 1] + frac * (values[lo] - values[lo - 1]);
}

ThresholdSelection select_threshold(const DeltaSample& sample, double q) {
  sample.validate();
  if (sample.values.empty()) {
    throw ConfigError("cannot select a threshold from an empty delta sample");
  }
  ThresholdSelection selection;
  selection.tau = percentile(sample.values, q);
  selection.q = q;
  selection.n = static_cast<int>(sample.values.size());
  return selection;
}

Histogram make_histogram(const std::vector<double>& values, int bins) {
  if (values.empty()) {
    throw ConfigError("cannot build a histogram from an empty sample");
  }
  if (bins < 1) {
    throw ConfigError("histogram needs at least one bin");
  }
  const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *min_it;
  const double hi = *max_it;

  Histogram histogram;
  if (lo == hi) {
    histogram.edges = {lo, hi};
    histogram.counts = {static_cast<int>(values.size())};
    return histogram;
  }
  const double width = (hi - lo) / bins;
  for (int i = 0; i <= bins; ++i) {
    histogram.edges.push_back(lo + width * i);
  }
  histogram.edges.back() = hi;  // avoid drift from repeated addition
  histogram.counts.assign(bins, 0);
  for (double v : values) {
    auto bin = static_cast<int>((v - lo) / width);
    if (bin >= bins) bin = bins - 1;  // the maximum lands in the last bin
    ++histogram.counts[bin];
  }
  return histogram;
}

DeltaSample collect_deltas(const std::vector<harness::DatasetRecord>& dataset,
                           backend::ModelBackend& backend, int runs,
                           const harness::RunOptions& options,
                           const std::vector<std::string>* evaluation_ids) {
  if (runs < 1) {
    throw ConfigError("collect_deltas needs at least one run per record");
  }
  if (dataset.empty()) {
    throw ConfigError("collect_deltas needs a non-empty dataset");
  }
  if (evaluation_ids != nullptr) {
    const std::unordered_set<std::string> held_out(evaluation_ids->begin(),
                                                   evaluation_ids->end());
    for (const auto& record : dataset) {
      if (held_out.count(record.id) != 0) {
        throw ConfigError("calibration record \"" + record.id +
                          "\" overlaps the evaluation set");
      }
    }
  }

  // Deltas are observed under plain sharded conversations; the threshold is
  // then applied to the same regime at evaluation time.
  policy::PolicyConfig policy;
  policy.kind = policy::PolicyKind::NoneSharded;

  DeltaSample sample;
  sample.source = options.settings.model_id;
  for (const auto& record : dataset) {
    const auto verifier = harness::default_verifier_for(record.task);
    for (int run_index = 0; run_index < runs; ++run_index) {
      const auto seed =
          harness::derive_run_seed(options.master_seed, record.id, run_index);
      const auto run = harness::simulate_run(record, policy, backend, verifier,
                                             options, run_index, seed);
      if (run.errored) {
        throw Error("calibration run failed on record \"" + record.id +
                    "\": " + run.error.value_or("unknown error"));
      }
      for (const auto& event : run.events) {
        if (event.delta) sample.values.push_back(*event.delta);
      }
    }
  }
  sample.count = static_cast<int>(sample.values.size());
  return sample;
}

}  // namespace ergo::calibrate
