#include "hiermarket/factor_pricing.hpp"

#include <cmath>
#include <set>

#include "hiermarket/errors.hpp"

namespace hiermarket {

namespace {

std::string shape(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

void expect_shape(const Eigen::MatrixXd& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != static_cast<Eigen::Index>(rows) || m.cols() != static_cast<Eigen::Index>(cols)) {
    throw ShapeError(std::string(what) + " is " + shape(m.rows(), m.cols()) + ", expected " +
                     shape(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  }
}

void expect_size(const Eigen::VectorXd& v, std::size_t n, const char* what) {
  if (v.size() != static_cast<Eigen::Index>(n)) {
    throw ShapeError(std::string(what) + " has " + std::to_string(v.size()) + " entries, expected " +
                     std::to_string(n));
  }
}

void check_state(const FactorModelSpec& spec, const InformationState& state) {
  expect_size(state.z, spec.n_top_down, "Z");
  expect_shape(state.theta, spec.n_assets, spec.n_bottom_up, "theta");
  expect_size(state.factor_returns, spec.n_factors, "factor returns");
}

}  // namespace

FactorModelSpec FactorModelSpec::zeros(std::size_t n, std::size_t p, std::size_t k, std::size_t m) {
  FactorModelSpec s;
  s.n_assets = n;
  s.n_factors = p;
  s.n_top_down = k;
  s.n_bottom_up = m;
  const auto N = static_cast<Eigen::Index>(n);
  const auto P = static_cast<Eigen::Index>(p);
  s.alpha0 = Eigen::VectorXd::Zero(N);
  s.alpha1 = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(k));
  s.b0 = Eigen::MatrixXd::Zero(N, P);
  s.b1 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), P);
  s.b2.assign(k, Eigen::MatrixXd::Zero(N, P));
  return s;
}

void FactorModelSpec::validate() const {
  expect_size(alpha0, n_assets, "alpha0");
  expect_shape(alpha1, n_assets, n_top_down, "alpha1");
  expect_shape(b0, n_assets, n_factors, "b0");
  expect_shape(b1, n_bottom_up, n_factors, "b1");
  if (b2.size() != n_top_down) {
    throw ShapeError("b2 has " + std::to_string(b2.size()) + " slices, expected K = " + std::to_string(n_top_down));
  }
  for (const auto& slice : b2) expect_shape(slice, n_assets, n_factors, "b2 slice");
  bool finite = alpha0.allFinite() && alpha1.allFinite() && b0.allFinite() && b1.allFinite();
  for (const auto& slice : b2) finite = finite && slice.allFinite();
  if (!finite) throw DomainError("factor model coefficients must be finite");
}

bool FactorModelSpec::operator==(const FactorModelSpec& o) const {
  if (n_assets != o.n_assets || n_factors != o.n_factors || n_top_down != o.n_top_down ||
      n_bottom_up != o.n_bottom_up || b2.size() != o.b2.size()) {
    return false;
  }
  if (alpha0 != o.alpha0 || alpha1 != o.alpha1 || b0 != o.b0 || b1 != o.b1) return false;
  for (std::size_t k = 0; k < b2.size(); ++k) {
    if (b2[k] != o.b2[k]) return false;
  }
  return true;
}

InformationState ReturnPanel::state(std::size_t t) const {
  if (t >= periods()) throw IndexError("panel: period " + std::to_string(t) + " out of range");
  const auto row = static_cast<Eigen::Index>(t);
  return {z.row(row).transpose(), theta.empty() ? Eigen::MatrixXd(assets(), 0) : theta[t],
          factors.row(row).transpose()};
}

void ReturnPanel::validate() const {
  const auto t = returns.rows();
  if (t < 2) throw DataError("panel: need at least 2 periods, got " + std::to_string(t));
  if (factors.rows() != t || z.rows() != t) throw ShapeError("panel: factor and Z series must have " + std::to_string(t) + " rows");
  if (!theta.empty() && theta.size() != static_cast<std::size_t>(t)) {
    throw ShapeError("panel: theta must have one N x M slice per period");
  }
  for (const auto& slice : theta) {
    if (slice.rows() != returns.cols() || slice.cols() != theta.front().cols()) {
      throw ShapeError("panel: every theta slice must be N x M");
    }
    if (!slice.allFinite()) throw DataError("panel: non-finite theta value");
  }
  if (!returns.allFinite() || !factors.allFinite() || !z.allFinite()) throw DataError("panel: non-finite value");
}

double ts_beta_estimate(const ReturnPanel& panel, std::size_t asset, std::size_t factor) {
  if (asset >= panel.assets()) throw IndexError("ts_beta: asset " + std::to_string(asset) + " out of range");
  if (factor >= panel.factor_count()) throw IndexError("ts_beta: factor " + std::to_string(factor) + " out of range");
  if (panel.periods() < 2) throw SampleSizeError("ts_beta: need at least 2 periods");
  const auto r = panel.returns.col(static_cast<Eigen::Index>(asset));
  const auto f = panel.factors.col(static_cast<Eigen::Index>(factor));
  const Eigen::VectorXd rc = r.array() - r.mean();
  const Eigen::VectorXd fc = f.array() - f.mean();
  const double var = fc.squaredNorm();
  // A constant column can leave rounding residue after centring.
  if (!(var > 0.0) || f.maxCoeff() == f.minCoeff()) throw SingularDataError("ts_beta: factor " + std::to_string(factor) + " has zero variance");
  return rc.dot(fc) / var;
}

double conditional_alpha(const FactorModelSpec& spec, std::size_t asset, const Eigen::VectorXd& z) {
  if (asset >= spec.n_assets) throw IndexError("alpha: asset out of range");
  expect_size(z, spec.n_top_down, "Z");
  const auto i = static_cast<Eigen::Index>(asset);
  double a = spec.alpha0(i);
  for (Eigen::Index k = 0; k < z.size(); ++k) a += spec.alpha1(i, k) * z(k);
  return a;
}

double conditional_beta(const FactorModelSpec& spec, std::size_t asset, std::size_t factor, const Eigen::VectorXd& z,
                        const Eigen::VectorXd& theta_row) {
  if (asset >= spec.n_assets) throw IndexError("beta: asset out of range");
  if (factor >= spec.n_factors) throw IndexError("beta: factor out of range");
  expect_size(z, spec.n_top_down, "Z");
  expect_size(theta_row, spec.n_bottom_up, "theta row");
  const auto i = static_cast<Eigen::Index>(asset);
  const auto p = static_cast<Eigen::Index>(factor);
  double b = spec.b0(i, p);
  for (std::size_t k = 0; k < spec.n_top_down; ++k) b += spec.b2[k](i, p) * z(static_cast<Eigen::Index>(k));
  for (Eigen::Index m = 0; m < theta_row.size(); ++m) b += spec.b1(m, p) * theta_row(m);
  return b;
}

Eigen::VectorXd predict_shared_risk(const FactorModelSpec& spec, const InformationState& state,
                                    const Eigen::VectorXd& expected_factor_returns) {
  expect_size(state.z, spec.n_top_down, "Z");
  expect_shape(state.theta, spec.n_assets, spec.n_bottom_up, "theta");
  expect_size(expected_factor_returns, spec.n_factors, "expected factor returns");
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.n_assets));
  for (std::size_t i = 0; i < spec.n_assets; ++i) {
    const Eigen::VectorXd theta_row = state.theta.row(static_cast<Eigen::Index>(i)).transpose();
    double e = conditional_alpha(spec, i, state.z);
    for (std::size_t p = 0; p < spec.n_factors; ++p) {
      e += conditional_beta(spec, i, p, state.z, theta_row) * expected_factor_returns(static_cast<Eigen::Index>(p));
    }
    out(static_cast<Eigen::Index>(i)) = e;
  }
  return out;
}

Eigen::VectorXd unified_return(const FactorModelSpec& spec, const InformationState& state,
                               const Eigen::VectorXd& idiosyncratic) {
  check_state(spec, state);
  expect_size(idiosyncratic, spec.n_assets, "idiosyncratic noise");
  const auto K = static_cast<Eigen::Index>(spec.n_top_down);
  const auto M = static_cast<Eigen::Index>(spec.n_bottom_up);
  const auto P = static_cast<Eigen::Index>(spec.n_factors);
  const auto& z = state.z;
  const auto& r = state.factor_returns;
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.n_assets));
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    double v = spec.alpha0(i);
    for (Eigen::Index k = 0; k < K; ++k) v += spec.alpha1(i, k) * z(k);
    for (Eigen::Index p = 0; p < P; ++p) {
      for (Eigen::Index k = 0; k < K; ++k) v += spec.b2[static_cast<std::size_t>(k)](i, p) * z(k) * r(p);
    }
    for (Eigen::Index p = 0; p < P; ++p) {
      for (Eigen::Index m = 0; m < M; ++m) v += spec.b1(m, p) * state.theta(i, m) * r(p);
    }
    for (Eigen::Index p = 0; p < P; ++p) v += spec.b0(i, p) * r(p);
    out(i) = v + idiosyncratic(i);
  }
  return out;
}

CrossSectionFit hb_cross_section(const Eigen::VectorXd& returns, const Eigen::MatrixXd& theta) {
  const Eigen::Index n = returns.size();
  const Eigen::Index m = theta.cols();
  if (theta.rows() != n) throw ShapeError("hb_cross_section: theta has " + std::to_string(theta.rows()) + " rows, returns " + std::to_string(n));
  if (n <= m + 1) {
    throw SampleSizeError("hb_cross_section: need N > M + 1 (N = " + std::to_string(n) + ", M = " + std::to_string(m) + ")");
  }
  Eigen::MatrixXd x(n, m + 1);
  x.col(0).setOnes();
  x.rightCols(m) = theta;
  const Eigen::Index dim = m + 1;

  CrossSectionFit fit;
  Eigen::VectorXd coef;
  Eigen::MatrixXd gram = x.transpose() * x;
  Eigen::MatrixXd gram_inverse;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == dim) {
    coef = qr.solve(returns);
    gram_inverse = gram.inverse();
  } else {
    fit.ridge = true;
    fit.ridge_lambda = 1e-8 * gram.trace() / static_cast<double>(dim);
    Eigen::MatrixXd regularised = gram + fit.ridge_lambda * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(regularised);
    coef = ldlt.solve(x.transpose() * returns);
    gram_inverse = ldlt.solve(Eigen::MatrixXd::Identity(dim, dim));
  }
  fit.alpha = coef(0);
  fit.delta = coef.tail(m);
  fit.residuals = returns - x * coef;
  const double sigma2 = fit.residuals.squaredNorm() / static_cast<double>(n - dim);
  fit.std_errors = (sigma2 * gram_inverse.diagonal().array()).max(0.0).sqrt();
  return fit;
}

std::vector<std::string> own_regressor_names(std::size_t asset, std::size_t k, std::size_t p) {
  const auto i = std::to_string(asset);
  std::vector<std::string> names{"alpha0[" + i + "]"};
  for (std::size_t a = 0; a < k; ++a) names.push_back("alpha1[" + i + "," + std::to_string(a) + "]");
  for (std::size_t b = 0; b < p; ++b) names.push_back("b0[" + i + "," + std::to_string(b) + "]");
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < p; ++b) {
      names.push_back("b2[" + i + "," + std::to_string(a) + "," + std::to_string(b) + "]");
    }
  }
  return names;
}

std::vector<std::string> shared_regressor_names(std::size_t m, std::size_t p) {
  std::vector<std::string> names;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < p; ++b) names.push_back("b1[" + std::to_string(a) + "," + std::to_string(b) + "]");
  }
  return names;
}

namespace {

std::string block_of(const std::string& name) {
  if (name.rfind("alpha0", 0) == 0) return "intercept (alpha0)";
  if (name.rfind("alpha1", 0) == 0) return "Z (alpha1)";
  if (name.rfind("b0", 0) == 0) return "r_p (b0)";
  if (name.rfind("b2", 0) == 0) return "Z*r_p (b2)";
  return "theta*r_p (b1)";
}

// Regressor names involved in (near) collinearity of a Gram matrix.
std::vector<std::string> collinear_regressors(const Eigen::MatrixXd& gram, const std::vector<std::string>& names) {
  const Eigen::Index d = gram.rows();
  std::vector<std::string> out;
  if (d == 0) return out;
  Eigen::VectorXd scale(d);
  std::vector<bool> zero(static_cast<std::size_t>(d), false);
  const double max_diag = gram.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double g = gram(j, j);
    if (!(g > 1e-14 * std::max(max_diag, 1e-300))) {
      zero[static_cast<std::size_t>(j)] = true;
      scale(j) = 0.0;
    } else {
      scale(j) = 1.0 / std::sqrt(g);
    }
  }
  std::set<Eigen::Index> flagged;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (zero[static_cast<std::size_t>(j)]) flagged.insert(j);
  }
  std::vector<Eigen::Index> live;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!zero[static_cast<std::size_t>(j)]) live.push_back(j);
  }
  if (!live.empty()) {
    const auto nl = static_cast<Eigen::Index>(live.size());
    Eigen::MatrixXd scaled(nl, nl);
    for (Eigen::Index a = 0; a < nl; ++a) {
      for (Eigen::Index b = 0; b < nl; ++b) scaled(a, b) = gram(live[a], live[b]) * scale(live[a]) * scale(live[b]);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    for (Eigen::Index e = 0; e < nl; ++e) {
      if (eig.eigenvalues()(e) > 1e-10 * static_cast<double>(nl)) continue;
      const auto v = eig.eigenvectors().col(e);
      for (Eigen::Index a = 0; a < nl; ++a) {
        if (std::abs(v(a)) > 0.1) flagged.insert(live[a]);
      }
    }
  }
  for (auto j : flagged) out.push_back(names[static_cast<std::size_t>(j)]);
  return out;
}

[[noreturn]] void throw_identifiability(const std::string& context, const std::vector<std::string>& regressors) {
  std::set<std::string> block_set;
  for (const auto& r : regressors) block_set.insert(block_of(r));
  std::vector<std::string> blocks(block_set.begin(), block_set.end());
  std::string msg = "calibrate_unified: " + context + "; collinear blocks:";
  for (const auto& b : blocks) msg += " " + b + ";";
  msg += " regressors:";
  std::size_t shown = 0;
  for (const auto& r : regressors) {
    if (shown++ == 12) {
      msg += " ...";
      break;
    }
    msg += " " + r;
  }
  throw IdentifiabilityError(msg, regressors, blocks);
}

// Own regressors for one period: [1, Z, r, Z (x) r].
Eigen::VectorXd own_row(const Eigen::VectorXd& z, const Eigen::VectorXd& r) {
  const Eigen::Index K = z.size();
  const Eigen::Index P = r.size();
  Eigen::VectorXd x(1 + K + P + K * P);
  x(0) = 1.0;
  x.segment(1, K) = z;
  x.segment(1 + K, P) = r;
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index p = 0; p < P; ++p) x(1 + K + P + k * P + p) = z(k) * r(p);
  }
  return x;
}

// Shared regressors for one asset-period: theta_m * r_p, m-major.
Eigen::VectorXd shared_row(const Eigen::MatrixXd& theta, Eigen::Index asset, const Eigen::VectorXd& r) {
  const Eigen::Index M = theta.cols();
  const Eigen::Index P = r.size();
  Eigen::VectorXd w(M * P);
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index p = 0; p < P; ++p) w(m * P + p) = theta(asset, m) * r(p);
  }
  return w;
}

void unpack_own(FactorModelSpec& spec, std::size_t asset, const Eigen::VectorXd& v) {
  const auto i = static_cast<Eigen::Index>(asset);
  const auto K = static_cast<Eigen::Index>(spec.n_top_down);
  const auto P = static_cast<Eigen::Index>(spec.n_factors);
  spec.alpha0(i) = v(0);
  for (Eigen::Index k = 0; k < K; ++k) spec.alpha1(i, k) = v(1 + k);
  for (Eigen::Index p = 0; p < P; ++p) spec.b0(i, p) = v(1 + K + p);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index p = 0; p < P; ++p) spec.b2[static_cast<std::size_t>(k)](i, p) = v(1 + K + P + k * P + p);
  }
}

void unpack_shared(FactorModelSpec& spec, const Eigen::VectorXd& v) {
  const auto P = static_cast<Eigen::Index>(spec.n_factors);
  for (Eigen::Index m = 0; m < static_cast<Eigen::Index>(spec.n_bottom_up); ++m) {
    for (Eigen::Index p = 0; p < P; ++p) spec.b1(m, p) = v(m * P + p);
  }
}

Calibration calibrate_pooled(const ReturnPanel& panel) {
  const std::size_t T = panel.periods();
  const std::size_t N = panel.assets();
  const std::size_t P = panel.factor_count();
  const std::size_t K = panel.top_down_count();
  const std::size_t M = panel.bottom_up_count();
  const auto d = static_cast<Eigen::Index>(1 + K + P + K * P);
  const auto e = static_cast<Eigen::Index>(M * P);

  Calibration cal;
  cal.mode = CalibrationMode::pooled;
  cal.observations = T * N;
  cal.parameters = N * static_cast<std::size_t>(d) + static_cast<std::size_t>(e);
  if (cal.observations < 5 * cal.parameters) {
    throw IdentifiabilityError("calibrate_unified: under-identified design, " + std::to_string(cal.observations) +
                                   " observations for " + std::to_string(cal.parameters) +
                                   " parameters (need at least 5x)",
                               {}, {"sample size"});
  }

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  std::vector<Eigen::MatrixXd> cross(N, Eigen::MatrixXd::Zero(d, e));
  Eigen::MatrixXd shared_gram = Eigen::MatrixXd::Zero(e, e);
  Eigen::MatrixXd own_y = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(N));
  Eigen::VectorXd shared_y = Eigen::VectorXd::Zero(e);
  double sum_y = 0.0;
  double sum_y2 = 0.0;

  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const Eigen::VectorXd z = panel.z.row(row).transpose();
    const Eigen::VectorXd r = panel.factors.row(row).transpose();
    const Eigen::VectorXd x = own_row(z, r);
    gram.noalias() += x * x.transpose();
    for (std::size_t i = 0; i < N; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      const double y = panel.returns(row, col);
      own_y.col(col).noalias() += x * y;
      sum_y += y;
      sum_y2 += y * y;
      if (e > 0) {
        const Eigen::VectorXd w = shared_row(panel.theta[t], col, r);
        cross[i].noalias() += x * w.transpose();
        shared_gram.noalias() += w * w.transpose();
        shared_y.noalias() += w * y;
      }
    }
  }

  const auto own_names = own_regressor_names(0, K, P);
  {
    auto flagged = collinear_regressors(gram, own_names);
    if (!flagged.empty()) {
      // Own regressors are common to every asset; report them for asset 0..N-1 generically.
      for (auto& f : flagged) f.replace(f.find("[0"), 2, "[i");
      throw_identifiability("per-asset regressors are collinear", flagged);
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> gram_qr(gram);
  const Eigen::MatrixXd gram_inv = gram_qr.inverse();

  Eigen::VectorXd shared_coef(e);
  Eigen::MatrixXd schur_inv(e, e);
  if (e > 0) {
    Eigen::MatrixXd schur = shared_gram;
    Eigen::VectorXd rhs = shared_y;
    for (std::size_t i = 0; i < N; ++i) {
      const Eigen::MatrixXd gc = gram_inv * cross[i];
      schur.noalias() -= cross[i].transpose() * gc;
      rhs.noalias() -= gc.transpose() * own_y.col(static_cast<Eigen::Index>(i));
    }
    const auto shared_names = shared_regressor_names(M, P);
    // Collinearity within theta*r, either outright or after partialling out the own regressors.
    auto flagged = collinear_regressors(shared_gram, shared_names);
    if (flagged.empty()) {
      Eigen::MatrixXd scaled = schur;
      for (Eigen::Index a = 0; a < e; ++a) {
        for (Eigen::Index b = 0; b < e; ++b) scaled(a, b) /= std::sqrt(shared_gram(a, a) * shared_gram(b, b));
      }
      flagged = collinear_regressors(scaled, shared_names);
    }
    if (!flagged.empty()) throw_identifiability("bottom-up interaction regressors are not identified", flagged);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> schur_qr(schur);
    shared_coef = schur_qr.solve(rhs);
    schur_inv = schur_qr.inverse();
  }

  cal.estimate = FactorModelSpec::zeros(N, P, K, M);
  cal.std_error = FactorModelSpec::zeros(N, P, K, M);
  std::vector<Eigen::VectorXd> own_coef(N);
  for (std::size_t i = 0; i < N; ++i) {
    Eigen::VectorXd rhs = own_y.col(static_cast<Eigen::Index>(i));
    if (e > 0) rhs.noalias() -= cross[i] * shared_coef;
    own_coef[i] = gram_qr.solve(rhs);
    unpack_own(cal.estimate, i, own_coef[i]);
  }
  if (e > 0) unpack_shared(cal.estimate, shared_coef);

  double rss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const Eigen::VectorXd r = panel.factors.row(row).transpose();
    const Eigen::VectorXd x = own_row(panel.z.row(row).transpose(), r);
    for (std::size_t i = 0; i < N; ++i) {
      double fitted = x.dot(own_coef[i]);
      if (e > 0) fitted += shared_row(panel.theta[t], static_cast<Eigen::Index>(i), r).dot(shared_coef);
      const double resid = panel.returns(row, static_cast<Eigen::Index>(i)) - fitted;
      rss += resid * resid;
    }
  }
  const auto n_obs = static_cast<double>(cal.observations);
  const double tss = sum_y2 - sum_y * sum_y / n_obs;
  cal.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  cal.residual_variance = rss / (n_obs - static_cast<double>(cal.parameters));

  cal.own_covariance.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    Eigen::MatrixXd cov = gram_inv;
    if (e > 0) {
      const Eigen::MatrixXd gc = gram_inv * cross[i];
      cov.noalias() += gc * schur_inv * gc.transpose();
    }
    cov *= cal.residual_variance;
    unpack_own(cal.std_error, i, cov.diagonal().cwiseMax(0.0).cwiseSqrt());
    cal.own_covariance[i] = std::move(cov);
  }
  if (e > 0) {
    cal.shared_covariance = cal.residual_variance * schur_inv;
    unpack_shared(cal.std_error, cal.shared_covariance.diagonal().cwiseMax(0.0).cwiseSqrt());
  }
  return cal;
}

// OLS of y on design x; returns coefficients and their covariance.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  const Eigen::VectorXd coef = qr.solve(y);
  const double dof = static_cast<double>(x.rows() - x.cols());
  const double sigma2 = (y - x * coef).squaredNorm() / dof;
  return {coef, sigma2 * (x.transpose() * x).inverse()};
}

Calibration calibrate_two_stage(const ReturnPanel& panel) {
  const std::size_t T = panel.periods();
  const std::size_t N = panel.assets();
  const std::size_t P = panel.factor_count();
  const std::size_t K = panel.top_down_count();
  const std::size_t M = panel.bottom_up_count();
  const auto d = static_cast<Eigen::Index>(1 + K + P + K * P);

  Calibration cal;
  cal.mode = CalibrationMode::two_stage;
  cal.observations = T * N;
  cal.parameters = N * static_cast<std::size_t>(d) + M * P;
  cal.estimate = FactorModelSpec::zeros(N, P, K, M);
  cal.std_error = FactorModelSpec::zeros(N, P, K, M);
  cal.period_alpha.resize(static_cast<Eigen::Index>(T));
  cal.period_delta.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(M));

  // Stage 1: per-period cross sections.
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const Eigen::MatrixXd theta = M > 0 ? panel.theta[t] : Eigen::MatrixXd(static_cast<Eigen::Index>(N), 0);
    const auto fit = hb_cross_section(panel.returns.row(row).transpose(), theta);
    cal.period_alpha(row) = fit.alpha;
    if (M > 0) cal.period_delta.row(row) = fit.delta.transpose();
    if (fit.ridge) cal.ridge_periods.push_back(t);
  }

  Eigen::MatrixXd x_own(static_cast<Eigen::Index>(T), d);
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    x_own.row(row) = own_row(panel.z.row(row).transpose(), panel.factors.row(row).transpose()).transpose();
  }
  if (static_cast<Eigen::Index>(T) <= d) {
    throw IdentifiabilityError("calibrate_unified: two-stage needs more periods than per-asset regressors", {},
                               {"sample size"});
  }
  {
    auto flagged = collinear_regressors(x_own.transpose() * x_own, own_regressor_names(0, K, P));
    if (!flagged.empty()) {
      for (auto& f : flagged) f.replace(f.find("[0"), 2, "[i");
      throw_identifiability("per-asset regressors are collinear", flagged);
    }
  }

  // Stage 2a: payoffs on factor returns give b1.
  if (M > 0) {
    if (!cal.ridge_periods.empty() && cal.ridge_periods.size() == T) {
      throw_identifiability("bottom-up attributes are degenerate in every period", shared_regressor_names(M, P));
    }
    Eigen::MatrixXd x_delta(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(P + 1));
    x_delta.col(0).setOnes();
    x_delta.rightCols(static_cast<Eigen::Index>(P)) = panel.factors;
    for (std::size_t m = 0; m < M; ++m) {
      const auto [coef, cov] = ols(x_delta, cal.period_delta.col(static_cast<Eigen::Index>(m)));
      for (std::size_t p = 0; p < P; ++p) {
        const auto j = static_cast<Eigen::Index>(p + 1);
        cal.estimate.b1(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p)) = coef(j);
        cal.std_error.b1(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p)) = std::sqrt(std::max(cov(j, j), 0.0));
      }
    }
  }

  // Stage 2b: per-asset time series after removing the attribute payoffs.
  double rss = 0.0;
  double sum_y = 0.0;
  double sum_y2 = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    Eigen::VectorXd y = panel.returns.col(col);
    Eigen::VectorXd adjusted = y;
    for (std::size_t t = 0; t < T && M > 0; ++t) {
      adjusted(static_cast<Eigen::Index>(t)) -=
          cal.period_delta.row(static_cast<Eigen::Index>(t)).dot(panel.theta[t].row(col));
    }
    const auto [coef, cov] = ols(x_own, adjusted);
    unpack_own(cal.estimate, i, coef);
    unpack_own(cal.std_error, i, cov.diagonal().cwiseMax(0.0).cwiseSqrt());
    for (std::size_t t = 0; t < T; ++t) {
      const auto row = static_cast<Eigen::Index>(t);
      double fitted = x_own.row(row).dot(coef);
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t p = 0; p < P; ++p) {
          fitted += cal.estimate.b1(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p)) *
                    panel.theta[t](col, static_cast<Eigen::Index>(m)) * panel.factors(row, static_cast<Eigen::Index>(p));
        }
      }
      rss += (y(row) - fitted) * (y(row) - fitted);
      sum_y += y(row);
      sum_y2 += y(row) * y(row);
    }
  }
  const auto n_obs = static_cast<double>(cal.observations);
  const double tss = sum_y2 - sum_y * sum_y / n_obs;
  cal.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  cal.residual_variance = rss / (n_obs - static_cast<double>(cal.parameters));
  return cal;
}

}  // namespace

Calibration calibrate_unified(const ReturnPanel& panel, CalibrationMode mode) {
  panel.validate();
  return mode == CalibrationMode::pooled ? calibrate_pooled(panel) : calibrate_two_stage(panel);
}

}  // namespace hiermarket
