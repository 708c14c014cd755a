#pragma once

// Couples the three levels into one generative model:
//
//   spin lattices / Gaussian  ->  eps_i
//   partition + eta_s         ->  g eta + sqrt(1 - g^2) eps
//   Z, theta, factor returns  ->  conditional alpha and betas
//
// and applies scheduled parameter interventions along the way.
//
// Random streams are keyed by (master seed, role, index):
//   "z" 0, "theta" i, "factor" 0, "idio" i, "spin_lattice" i,
//   "cluster_eta" 0, "partition" 0
// so results do not depend on execution order or thread count.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hiermarket/cluster_dynamics.hpp"
#include "hiermarket/factor_pricing.hpp"
#include "hiermarket/spin_market.hpp"

namespace hiermarket {

enum class NoiseSource { gaussian, spin_lattice };
NoiseSource parse_noise_source(std::string_view name);
std::string_view to_string(NoiseSource s);

struct SpinNoiseParams {
  SpinMarketParams lattice;
  double price_scale = 0.1;         // c in X = c M
  std::size_t sweeps_per_step = 1;
  std::size_t burn_in = 1000;       // market steps discarded before t = 0
  std::size_t window = 10000;       // span of the exponentially weighted standardization
};

struct ClusterParams {
  Partition initial;
  FissionFusionRates rates;
};

struct FactorLayerParams {
  FactorModelSpec spec;
  Eigen::VectorXd mean;          // P, also used as E[r_p]
  Eigen::VectorXd vol;           // P
  double noise_scale = 1.0;      // multiplies the composed noise term
  double z_phi = 0.0;
  double theta_phi = 0.0;
  Eigen::VectorXd z_offset;      // K, long-run mean of Z
  Eigen::VectorXd theta_offset;  // M, long-run mean of theta
};

struct Intervention {
  std::size_t time = 0;
  std::string path;
  double value = 0.0;
  std::size_t line = 0;  // source line in the config, 0 if unknown
};

struct ScenarioConfig {
  std::size_t n_assets = 0;
  std::size_t horizon = 0;
  std::uint64_t master_seed = 0;
  NoiseSource noise_source = NoiseSource::gaussian;
  Eigen::VectorXd initial_prices;  // N, strictly positive
  SpinNoiseParams spin;
  ClusterParams cluster;
  FactorLayerParams factor;
  std::vector<Intervention> interventions;

  /// A config for n assets, T steps and the given factor dimensions with
  /// every coefficient zero, unit factor volatility and singleton clusters.
  static ScenarioConfig defaults(std::size_t n, std::size_t horizon, std::size_t p = 1, std::size_t k = 0,
                                 std::size_t m = 0);

  /// Throws ConfigError, anchored to the intervention's line when one is at fault.
  void validate() const;
};

/// A parameter path such as "b2[3,*,1]". Missing brackets or "*" select
/// every index along that axis.
struct ParameterPath {
  std::string name;
  std::vector<std::optional<std::size_t>> index;

  static ParameterPath parse(const std::string& text);
  std::string to_string() const;
};

/// Names accepted by ParameterPath, with their number of indices.
const std::vector<std::pair<std::string, std::size_t>>& intervention_targets();

struct InterventionEvent {
  std::size_t time = 0;
  std::string path;  // concrete scalar, e.g. "b0[3,1]"
  double before = 0.0;
  double after = 0.0;
};

/// Mutable parameters of a running scenario.
struct EngineState {
  std::size_t t = 0;
  std::size_t n_assets = 0;
  FactorLayerParams factor;
  Partition partition;
  FissionFusionRates rates;
  std::vector<SpinMarketParams> spin;  // per asset; empty for Gaussian noise

  static EngineState initial(const ScenarioConfig& cfg);
};

/// Replaces the parameter(s) at event.path and appends one log entry per
/// scalar changed. Requires event.time == state.t. A cluster index that
/// does not exist at that time changes nothing and logs NaN before/after.
void apply_intervention(EngineState& state, const Intervention& event, std::vector<InterventionEvent>& log);

/// Unanticipated returns
///   alpha_i + sum_p beta_ip (r_p - E r_p) + scale (g eta_s + sqrt(1 - g^2) eps_i).
Eigen::VectorXd emergence_step(const FactorModelSpec& spec, const InformationState& state, const Partition& p,
                               const ClusterNoiseDraw& draws, const Eigen::VectorXd& expected_factor_returns,
                               double noise_scale = 1.0);

struct SimulationOutput {
  Eigen::MatrixXd returns;              // T x N, log returns over (t, t+1]
  Eigen::MatrixXd prices;               // (T+1) x N, row 0 is the initial price
  Eigen::MatrixXd factors;              // T x P
  Eigen::MatrixXd z;                    // T x K
  std::vector<Eigen::MatrixXd> theta;   // T of N x M
  std::vector<Partition> partitions;    // T, the partition in force at step t
  Eigen::MatrixXd magnetization;        // T x N for spin noise, else empty
  std::vector<InterventionEvent> events;

  ReturnPanel panel() const;
  bool operator==(const SimulationOutput& other) const;
};

struct RunOptions {
  std::size_t threads = 1;
};

SimulationOutput run_scenario(const ScenarioConfig& cfg, const RunOptions& options = {});

/// The same scenario with the cluster layer removed: returns are
/// unified_return(spec, state, scale * eps) with eps from the same streams.
SimulationOutput run_factor_only(const ScenarioConfig& cfg, const RunOptions& options = {});

/// Standardized spin-lattice noise for one asset, T values, with the
/// magnetization at the end of every step. Spin interventions for that asset
/// are applied at their times.
struct SpinNoiseSeries {
  std::vector<double> eps;
  std::vector<double> magnetization;
};
SpinNoiseSeries spin_noise_series(const ScenarioConfig& cfg, std::size_t asset);

}  // namespace hiermarket
