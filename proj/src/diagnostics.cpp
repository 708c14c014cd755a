#include "hiermarket/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "hiermarket/errors.hpp"

namespace hiermarket {

namespace {

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

}  // namespace

std::vector<double> acf(std::span<const double> series, std::size_t max_lag) {
  const std::size_t n = series.size();
  if (n <= max_lag + 1) {
    throw SampleSizeError("acf: series length " + std::to_string(n) + " must exceed max_lag + 1 = " +
                          std::to_string(max_lag + 1));
  }
  const double m = mean_of(series);
  std::vector<double> centred(n);
  std::transform(series.begin(), series.end(), centred.begin(), [m](double v) { return v - m; });

  double gamma0 = 0.0;
  for (double v : centred) gamma0 += v * v;
  gamma0 /= static_cast<double>(n);
  if (!(gamma0 > 0.0)) throw UndefinedVarianceError("acf: constant series has undefined autocorrelation");

  std::vector<double> out(max_lag + 1);
  out[0] = 1.0;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    double s = 0.0;
    for (std::size_t t = lag; t < n; ++t) s += centred[t] * centred[t - lag];
    out[lag] = (s / static_cast<double>(n - lag)) / gamma0;
  }
  return out;
}

double noise_band(std::size_t n) { return 1.96 / std::sqrt(static_cast<double>(n)); }

double excess_kurtosis(std::span<const double> series) {
  if (series.size() < 4) throw SampleSizeError("excess_kurtosis: need at least 4 observations");
  const double m = mean_of(series);
  double m2 = 0.0;
  double m4 = 0.0;
  for (double v : series) {
    const double d = v - m;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  const auto n = static_cast<double>(series.size());
  m2 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw UndefinedVarianceError("excess_kurtosis: zero variance");
  return m4 / (m2 * m2) - 3.0;
}

double hill_tail_index(std::span<const double> series, double k_fraction, Tail tail) {
  if (!(k_fraction > 0.0 && k_fraction < 1.0)) throw DomainError("hill_tail_index: k_fraction must be in (0, 1)");
  std::vector<double> values(series.size());
  std::transform(series.begin(), series.end(), values.begin(), [tail](double v) {
    switch (tail) {
      case Tail::upper: return std::max(v, 0.0);
      case Tail::lower: return std::max(-v, 0.0);
      case Tail::absolute: break;
    }
    return std::abs(v);
  });
  const auto k = static_cast<std::size_t>(std::floor(k_fraction * static_cast<double>(values.size())));
  constexpr std::size_t kMinExceedances = 50;
  if (k < kMinExceedances || k >= values.size()) {
    throw SampleSizeError("hill_tail_index: " + std::to_string(k) + " tail observations, need at least " +
                          std::to_string(kMinExceedances));
  }
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end(),
                   std::greater<>());
  const double threshold = values[k];
  std::size_t exceedances = 0;
  double log_sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (values[j] > threshold) {
      ++exceedances;
      log_sum += std::log(values[j] / threshold);
    }
  }
  if (!(threshold > 0.0) || exceedances < kMinExceedances) {
    throw SampleSizeError("hill_tail_index: only " + std::to_string(exceedances) +
                          " exceedances over a positive threshold, need at least " + std::to_string(kMinExceedances));
  }
  return static_cast<double>(k) / log_sum;
}

std::size_t jump_count(std::span<const double> series, double threshold_sd) {
  if (series.size() < 2) return 0;
  const double m = mean_of(series);
  double ss = 0.0;
  for (double v : series) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(series.size() - 1));
  if (!(sd > 0.0)) return 0;
  return static_cast<std::size_t>(
      std::count_if(series.begin(), series.end(), [&](double v) { return std::abs(v - m) > threshold_sd * sd; }));
}

ClusterCorrelationSummary cluster_correlations(const Eigen::MatrixXd& panel, std::span<const int> labels) {
  if (static_cast<std::size_t>(panel.cols()) != labels.size()) {
    throw ShapeError("cluster_correlations: panel has " + std::to_string(panel.cols()) + " columns but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (panel.rows() < 2) throw SampleSizeError("cluster_correlations: need at least 2 rows");
  const Eigen::MatrixXd centred = panel.rowwise() - panel.colwise().mean();
  const Eigen::VectorXd sd = centred.colwise().norm();
  ClusterCorrelationSummary out;
  double within = 0.0;
  double cross = 0.0;
  for (Eigen::Index i = 0; i < panel.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < panel.cols(); ++j) {
      if (!(sd(i) > 0.0) || !(sd(j) > 0.0)) continue;
      const double r = centred.col(i).dot(centred.col(j)) / (sd(i) * sd(j));
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        within += r;
        ++out.within_pairs;
      } else {
        cross += r;
        ++out.cross_pairs;
      }
    }
  }
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  out.within = out.within_pairs ? within / static_cast<double>(out.within_pairs) : nan;
  out.cross = out.cross_pairs ? cross / static_cast<double>(out.cross_pairs) : nan;
  return out;
}

bool StylizedFactsReport::volatility_clustering() const {
  if (lags.empty()) return false;
  bool any_long = false;
  for (std::size_t l = 0; l < lags.size(); ++l) {
    if (lags[l] >= 10) {
      any_long = true;
      if (!(acf_abs_returns[l] > band)) return false;
    }
  }
  if (any_long) return true;
  return acf_abs_returns.back() > band;
}

StylizedFactsReport stylized_facts(std::span<const double> series, const StylizedFactsOptions& options) {
  StylizedFactsReport r;
  r.n = series.size();
  r.mean = mean_of(series);
  double ss = 0.0;
  for (double v : series) ss += (v - r.mean) * (v - r.mean);
  r.sd = series.size() > 1 ? std::sqrt(ss / static_cast<double>(series.size() - 1)) : 0.0;

  r.lags = options.lags;
  std::sort(r.lags.begin(), r.lags.end());
  const std::size_t max_lag = r.lags.empty() ? 0 : r.lags.back();
  const auto a = acf(series, max_lag);
  std::vector<double> abs_series(series.size());
  std::transform(series.begin(), series.end(), abs_series.begin(), [](double v) { return std::abs(v); });
  const auto b = acf(abs_series, max_lag);
  for (auto lag : r.lags) {
    r.acf_returns.push_back(a[lag]);
    r.acf_abs_returns.push_back(b[lag]);
  }
  r.band = noise_band(series.size());
  r.excess_kurtosis = excess_kurtosis(series);

  auto try_hill = [&](double k, Tail tail) -> std::optional<double> {
    try {
      return hill_tail_index(series, k, tail);
    } catch (const SampleSizeError&) {
      return std::nullopt;
    }
  };
  r.hill_upper = try_hill(options.hill_k_fraction, Tail::upper);
  r.hill_lower = try_hill(options.hill_k_fraction, Tail::lower);
  for (double k : options.hill_sensitivity) r.hill_by_k.emplace_back(k, try_hill(k, Tail::absolute));
  r.jump_count = jump_count(series, options.jump_threshold_sd);
  return r;
}

}  // namespace hiermarket
