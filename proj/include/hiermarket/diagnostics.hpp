#pragma once

// Stylized-fact statistics for return series.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hiermarket {

/// Sample autocorrelations for lags 0..max_lag. Lag-l autocovariance is
/// averaged over its n - l products, so a perfect alternation gives exactly -1.
/// Throws UndefinedVarianceError for a constant series and SampleSizeError
/// unless size() > max_lag + 1.
std::vector<double> acf(std::span<const double> series, std::size_t max_lag);

/// Half-width of the 95% white-noise band, 1.96 / sqrt(n).
double noise_band(std::size_t n);

/// Fourth standardized (population) moment minus 3.
double excess_kurtosis(std::span<const double> series);

enum class Tail { absolute, upper, lower };

/// Hill estimate of the tail index from the top k_fraction of the sample.
/// `absolute` works on |X|; `upper`/`lower` on max(±X, 0). Throws
/// SampleSizeError with fewer than 50 exceedances over the threshold.
double hill_tail_index(std::span<const double> series, double k_fraction = 0.05, Tail tail = Tail::absolute);

/// Number of observations further than `threshold_sd` sample standard
/// deviations from the mean.
std::size_t jump_count(std::span<const double> series, double threshold_sd = 4.0);

struct ClusterCorrelationSummary {
  double within = 0.0;  // mean pairwise correlation, same cluster (NaN if no pairs)
  double cross = 0.0;   // mean pairwise correlation, different clusters (NaN if no pairs)
  std::size_t within_pairs = 0;
  std::size_t cross_pairs = 0;
};

/// Mean within- and cross-cluster sample correlations of a T x N panel.
ClusterCorrelationSummary cluster_correlations(const Eigen::MatrixXd& panel, std::span<const int> labels);

struct StylizedFactsOptions {
  std::vector<std::size_t> lags{1, 5, 10, 20};
  double hill_k_fraction = 0.05;
  std::vector<double> hill_sensitivity{0.01, 0.025, 0.05, 0.10};
  double jump_threshold_sd = 4.0;
};

struct StylizedFactsReport {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  std::vector<std::size_t> lags;
  std::vector<double> acf_returns;
  std::vector<double> acf_abs_returns;
  double band = 0.0;
  double excess_kurtosis = 0.0;
  std::optional<double> hill_upper;
  std::optional<double> hill_lower;
  std::vector<std::pair<double, std::optional<double>>> hill_by_k;  // |X| tail for each k fraction
  std::size_t jump_count = 0;

  /// ACF of |X| above the band at every requested lag >= 10, or at the
  /// largest requested lag when none reaches 10.
  bool volatility_clustering() const;
  bool fat_tails() const { return excess_kurtosis > 1.0; }
};

StylizedFactsReport stylized_facts(std::span<const double> series, const StylizedFactsOptions& options = {});

}  // namespace hiermarket
