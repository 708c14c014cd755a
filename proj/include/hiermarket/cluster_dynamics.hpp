#pragma once

// Cluster layer: assets grouped into mutually exclusive clusters, each with
// an intra-cluster coupling g_s. Increments follow
//   X_i = g_s eta_s + sqrt(1 - g_s^2) eps_i,   s = label of asset i.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hiermarket/random.hpp"

namespace hiermarket {

/// Assignment of N assets to q clusters. Always held in canonical form:
/// labels are 0..q-1 numbered by first appearance, and couplings()[s] is
/// the coupling of cluster s.
class Partition {
 public:
  Partition() = default;
  /// `labels` may be any non-negative integers; `couplings` is indexed by
  /// the raw label and must cover every label used.
  Partition(std::span<const int> labels, std::span<const double> couplings);

  static Partition singletons(std::size_t n, double g = 0.0);
  static Partition single_cluster(std::size_t n, double g);
  /// Consecutive blocks of the given sizes, cluster s taking g[s].
  static Partition blocks(std::span<const std::size_t> sizes, std::span<const double> g);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t n_clusters() const noexcept { return couplings_.size(); }
  std::span<const int> labels() const noexcept { return labels_; }
  std::span<const double> couplings() const noexcept { return couplings_; }
  int label(std::size_t asset) const;
  double coupling_of(std::size_t asset) const { return couplings_[static_cast<std::size_t>(label(asset))]; }
  std::vector<std::size_t> cluster_sizes() const;
  std::vector<std::vector<std::size_t>> members() const;

  void set_coupling(std::size_t cluster, double g);

  /// "[0 1 4] g=0.8; [2 3] g=0.5" with shortest round-trip couplings.
  std::string canonical_string() const;

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  std::vector<int> labels_;
  std::vector<double> couplings_;
};

struct PottsCouplingMatrix {
  Eigen::MatrixXd coupling;   // J, symmetric N x N; the diagonal is ignored
  Eigen::VectorXd external;   // k_i
  double inverse_temperature = 1.0;
  bool external_enabled = false;
};

/// H = -sum_{i<j} J_ij delta(s_i, s_j) - (1/beta) sum_i k_i s_i, where s_i in
/// the external term is the 1-based Potts state of asset i. The external term
/// only contributes when enabled.
double potts_energy(const Partition& p, const PottsCouplingMatrix& m);

struct ClusterNoiseDraw {
  Eigen::VectorXd eta;  // one per cluster
  Eigen::VectorXd eps;  // one per asset
  Eigen::VectorXd x;    // resulting increments
};

/// g eta + sqrt(1 - g^2) eps for a single asset.
inline double compose_cluster_noise(double g, double eta, double eps) noexcept {
  return g * eta + std::sqrt(1.0 - g * g) * eps;
}

/// Draws eta (one per cluster, in label order) then eps (one per asset).
ClusterNoiseDraw draw_cluster_noise(const Partition& p, RandomStream& rng);

/// T x N panel with fresh eta and eps every row.
Eigen::MatrixXd generate_cluster_returns(const Partition& p, std::size_t steps, RandomStream& rng);

// ---------------------------------------------------------------------------
// Maximum-likelihood cluster recovery.
//
// For standardized data the Gaussian log-likelihood of a cluster with n
// members and internal correlation mass c = sum_{i,j in s} C_ij, maximised
// over g, exceeds the all-independent value by
//   T/2 [ log(n/c) + (n-1) log((n^2 - n)/(n^2 - c)) ]     (n < c < n^2)
// at g^2 = (c - n)/(n^2 - n), and by 0 (g = 0) when c <= n. The search
// maximises the sum over clusters minus a per-cluster penalty for every
// non-singleton cluster.
// ---------------------------------------------------------------------------

/// Maximum-likelihood coupling for a cluster of n members with mass c.
double optimal_coupling(std::size_t n, double c);

/// Log-likelihood gain of one cluster relative to independence, maximised in g.
double cluster_log_likelihood_gain(std::size_t n, double c, std::size_t observations);

/// Z-scored sample correlation matrix (1/T normalisation). Throws DataError
/// naming the first zero-variance column.
Eigen::MatrixXd standardized_correlation(const Eigen::MatrixXd& panel);

/// Sum of per-cluster gains for a labelling (unpenalised).
double partition_log_likelihood_gain(const Eigen::MatrixXd& correlation, std::span<const int> labels,
                                     std::size_t observations);

struct ClusterFitOptions {
  /// Subtracted once per non-singleton cluster; negative selects 0.5 ln T.
  double penalty_per_cluster = -1.0;
  std::size_t exhaustive_max_assets = 8;
  std::size_t restarts = 4;
  std::size_t anneal_steps = 4000;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct ClusterFit {
  Partition partition;               // couplings set to the ML values
  double log_likelihood_gain = 0.0;  // over all-singletons, unpenalised
  double objective = 0.0;            // gain minus penalties; all-singletons scores 0
  double penalty_per_cluster = 0.0;
  std::size_t observations = 0;
  bool exhaustive = false;
};

double penalized_objective(const Eigen::MatrixXd& correlation, std::span<const int> labels,
                           std::size_t observations, double penalty_per_cluster);

ClusterFit fit_clusters_ml(const Eigen::MatrixXd& panel, const ClusterFitOptions& options = {});

// ---------------------------------------------------------------------------
// Fission-fusion dynamics.
// ---------------------------------------------------------------------------

struct FissionFusionRates {
  double split_prob = 0.0;
  double merge_prob = 0.0;
};

/// One step: with split_prob a uniformly chosen non-singleton cluster is cut
/// by a uniform random bipartition (children inherit g); with merge_prob two
/// distinct clusters merge (size-weighted mean g); otherwise, or when the
/// chosen move is impossible, the partition is unchanged.
Partition fission_fusion_step(const Partition& p, RandomStream& rng, const FissionFusionRates& rates);

/// Adjusted Rand index between two labellings of the same assets.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace hiermarket
