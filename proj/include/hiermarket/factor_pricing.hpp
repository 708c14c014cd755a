#pragma once

// Conditional factor pricing with top-down (Z) and bottom-up (theta)
// information:
//
//   r_{i,t+1} = alpha0_i + sum_k alpha1_{i,k} Z_{k,t}
//             + sum_{p,k} b2_{i,k,p} Z_{k,t} r_{p,t+1}
//             + sum_{p,m} b1_{m,p} theta_{i,m,t} r_{p,t+1}
//             + sum_p b0_{i,p} r_{p,t+1} + eps_{i,t+1}
//
// Information dated t always conditions returns dated t+1; a ReturnPanel
// stores both in the same row.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hiermarket {

struct FactorModelSpec {
  std::size_t n_assets = 0;    // N
  std::size_t n_factors = 0;   // P
  std::size_t n_top_down = 0;  // K
  std::size_t n_bottom_up = 0; // M

  Eigen::VectorXd alpha0;          // N
  Eigen::MatrixXd alpha1;          // N x K
  Eigen::MatrixXd b0;              // N x P
  Eigen::MatrixXd b1;              // M x P
  std::vector<Eigen::MatrixXd> b2; // K matrices of N x P; b2[k](i, p)

  static FactorModelSpec zeros(std::size_t n, std::size_t p, std::size_t k, std::size_t m);

  /// Throws ShapeError on inconsistent shapes and DomainError on non-finite values.
  void validate() const;

  bool operator==(const FactorModelSpec& other) const;
};

/// Conditioning information at date t together with the factor returns over
/// (t, t+1].
struct InformationState {
  Eigen::VectorXd z;               // K, dated t
  Eigen::MatrixXd theta;           // N x M, dated t
  Eigen::VectorXd factor_returns;  // P, dated t+1
};

struct ReturnPanel {
  Eigen::MatrixXd returns;             // T x N, row t holds r_{i,t+1}
  Eigen::MatrixXd factors;             // T x P, row t holds r_{p,t+1}
  Eigen::MatrixXd z;                   // T x K, row t holds Z_{k,t}
  std::vector<Eigen::MatrixXd> theta;  // T entries of N x M, entry t holds theta_{i,m,t}

  std::size_t periods() const noexcept { return static_cast<std::size_t>(returns.rows()); }
  std::size_t assets() const noexcept { return static_cast<std::size_t>(returns.cols()); }
  std::size_t factor_count() const noexcept { return static_cast<std::size_t>(factors.cols()); }
  std::size_t top_down_count() const noexcept { return static_cast<std::size_t>(z.cols()); }
  std::size_t bottom_up_count() const noexcept {
    return theta.empty() ? 0 : static_cast<std::size_t>(theta.front().cols());
  }

  InformationState state(std::size_t t) const;
  /// Shapes agree and every value is finite.
  void validate() const;
};

/// Time-series beta: sample cov(r_i, r_p) / sample var(r_p).
double ts_beta_estimate(const ReturnPanel& panel, std::size_t asset, std::size_t factor);

double conditional_alpha(const FactorModelSpec& spec, std::size_t asset, const Eigen::VectorXd& z);

/// b0_{i,p} + sum_k b2_{i,k,p} Z_k + sum_m b1_{m,p} theta_{i,m}.
double conditional_beta(const FactorModelSpec& spec, std::size_t asset, std::size_t factor, const Eigen::VectorXd& z,
                        const Eigen::VectorXd& theta_row);

/// E_t[r_{i,t+1}] = alpha_{i,t} + sum_p beta_{i,p,t} E_t[r_{p,t+1}].
Eigen::VectorXd predict_shared_risk(const FactorModelSpec& spec, const InformationState& state,
                                    const Eigen::VectorXd& expected_factor_returns);

/// Realized returns from the unified pricing equation.
Eigen::VectorXd unified_return(const FactorModelSpec& spec, const InformationState& state,
                               const Eigen::VectorXd& idiosyncratic);

struct CrossSectionFit {
  double alpha = 0.0;
  Eigen::VectorXd delta;       // M payoffs
  Eigen::VectorXd residuals;   // N
  Eigen::VectorXd std_errors;  // M + 1: intercept first
  bool ridge = false;          // design was rank deficient
  double ridge_lambda = 0.0;
};

/// One-date OLS of returns on an intercept and the M attributes. A rank
/// deficient design is solved by ridge with lambda = 1e-8 trace(X'X)/dim and
/// flagged. Requires N > M + 1.
CrossSectionFit hb_cross_section(const Eigen::VectorXd& returns, const Eigen::MatrixXd& theta);

enum class CalibrationMode { pooled, two_stage };

struct Calibration {
  CalibrationMode mode = CalibrationMode::pooled;
  FactorModelSpec estimate;
  FactorModelSpec std_error;
  double r_squared = 0.0;
  double residual_variance = 0.0;
  std::size_t observations = 0;
  std::size_t parameters = 0;

  // Pooled mode: covariance of each asset's own coefficients, ordered
  // [alpha0, alpha1(K), b0(P), b2(k-major, p-minor)], and of b1 (m-major).
  std::vector<Eigen::MatrixXd> own_covariance;
  Eigen::MatrixXd shared_covariance;

  // Two-stage mode: per-period cross-sectional intercepts and payoffs.
  Eigen::VectorXd period_alpha;   // T
  Eigen::MatrixXd period_delta;   // T x M
  std::vector<std::size_t> ridge_periods;
};

/// Least-squares calibration of every coefficient of the unified equation.
/// Throws IdentifiabilityError listing collinear regressors and their blocks.
Calibration calibrate_unified(const ReturnPanel& panel, CalibrationMode mode = CalibrationMode::pooled);

/// Regressor names in the pooled layout, e.g. "b2[3,0,1]".
std::vector<std::string> own_regressor_names(std::size_t asset, std::size_t k, std::size_t p);
std::vector<std::string> shared_regressor_names(std::size_t m, std::size_t p);

}  // namespace hiermarket
