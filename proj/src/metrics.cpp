#include "ergo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ergo/calibrate.hpp"

namespace ergo::metrics {

namespace {

// Continued fraction for the incomplete beta function (Lentz's method).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-14;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

// Coefficient only; the caller attaches the p-value and method tag.
double pearson_coefficient(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw UndefinedCorrelationError(
        "correlation undefined: an input has zero variance");
  }
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

void check_lengths(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    std::ostringstream msg;
    msg << "correlation inputs differ in length: " << x.size() << " vs "
        << y.size();
    throw ConfigError(msg.str());
  }
  if (x.size() < 3) {
    throw ConfigError("correlation requires at least 3 observations, got " +
                      std::to_string(x.size()));
  }
}

CorrelationResult build_result(double coefficient, int n,
                               CorrelationMethod method) {
  CorrelationResult result;
  result.coefficient = coefficient;
  result.n = n;
  result.method = method;
  const double df = n - 2;
  if (std::fabs(coefficient) >= 1.0) {
    result.p_value = 0.0;
  } else {
    const double t =
        coefficient * std::sqrt(df / (1.0 - coefficient * coefficient));
    result.p_value = students_t_two_sided_p(t, df);
  }
  return result;
}

}  // namespace

void ScoreSet::validate() const {
  if (n_runs != static_cast<int>(scores.size())) {
    std::ostringstream msg;
    msg << "score set n_runs " << n_runs << " disagrees with " << scores.size()
        << " stored scores";
    throw ConfigError(msg.str());
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 100.0)) {
      std::ostringstream msg;
      msg << "score " << s << " outside [0, 100] for instruction '"
          << instruction_id << "'";
      throw ConfigError(msg.str());
    }
  }
}

AggregateMetrics aggregate(const ScoreSet& scores) {
  scores.validate();
  if (scores.scores.empty()) {
    throw ConfigError("cannot aggregate an empty score set");
  }
  AggregateMetrics metrics;
  metrics.average =
      std::accumulate(scores.scores.begin(), scores.scores.end(), 0.0) /
      static_cast<double>(scores.scores.size());
  metrics.aptitude = calibrate::percentile(scores.scores, 90.0);
  metrics.unreliability =
      metrics.aptitude - calibrate::percentile(scores.scores, 10.0);
  return metrics;
}

std::string to_string(CorrelationMethod method) {
  return method == CorrelationMethod::Spearman ? "spearman" : "pearson";
}

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  check_lengths(x, y);
  const double r = pearson_coefficient(x, y);
  return build_result(r, static_cast<int>(x.size()), CorrelationMethod::Pearson);
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  check_lengths(x, y);
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  double rho;
  try {
    rho = pearson_coefficient(rx, ry);
  } catch (const UndefinedCorrelationError&) {
    throw UndefinedCorrelationError(
        "rank correlation undefined: an input has zero rank variance");
  }
  return build_result(rho, static_cast<int>(x.size()),
                      CorrelationMethod::Spearman);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&values](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(values.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) {
      ++j;
    }
    // Positions i..j (0-based) share the average of ranks i+1..j+1.
    const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = shared;
    }
    i = j + 1;
  }
  return ranks;
}

double incomplete_beta_regularized(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw ConfigError("incomplete beta requires a > 0 and b > 0");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  // The continued fraction converges fastest below the distribution mean;
  // use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double students_t_two_sided_p(double t, double df) {
  if (df <= 0.0) {
    throw ConfigError("t-distribution requires positive degrees of freedom");
  }
  const double x = df / (df + t * t);
  return incomplete_beta_regularized(df / 2.0, 0.5, x);
}

EntropyLengthAnalysis entropy_length_analysis(std::span<const DeltaPair> pairs) {
  if (pairs.size() < 3) {
    throw ConfigError(
        "entropy-length analysis requires at least 3 paired observations, got " +
        std::to_string(pairs.size()));
  }
  std::vector<double> entropy_deltas;
  std::vector<double> length_deltas;
  entropy_deltas.reserve(pairs.size());
  length_deltas.reserve(pairs.size());
  for (const auto& pair : pairs) {
    entropy_deltas.push_back(pair.entropy_delta);
    length_deltas.push_back(pair.length_delta);
  }
  EntropyLengthAnalysis analysis;
  analysis.spearman = spearman(entropy_deltas, length_deltas);
  analysis.pearson = pearson(entropy_deltas, length_deltas);
  return analysis;
}

}  // namespace ergo::metrics
