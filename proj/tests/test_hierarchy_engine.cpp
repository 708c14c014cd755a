#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hiermarket/diagnostics.hpp"
#include "hiermarket/errors.hpp"
#include "hiermarket/hierarchy_engine.hpp"
#include "oracles.hpp"

using namespace hiermarket;

namespace {

ScenarioConfig spin_config(std::size_t n, std::size_t t) {
  auto cfg = ScenarioConfig::defaults(n, t);
  cfg.master_seed = 5;
  cfg.noise_source = NoiseSource::spin_lattice;
  cfg.spin.lattice.side = 8;
  cfg.spin.burn_in = 200;
  cfg.spin.window = 2000;
  return cfg;
}

ScenarioConfig layered_config(std::size_t t) {
  auto cfg = ScenarioConfig::defaults(6, t, 2, 1, 2);
  cfg.master_seed = 31;
  std::mt19937_64 gen(31);
  cfg.factor.spec = oracle::random_spec(6, 2, 1, 2, gen);
  cfg.factor.mean << 0.004, 0.002;
  cfg.factor.vol << 0.03, 0.02;
  cfg.factor.noise_scale = 0.01;
  cfg.factor.z_phi = 0.9;
  cfg.factor.theta_phi = 0.5;
  cfg.cluster.initial = Partition::blocks(std::vector<std::size_t>{3, 3}, std::vector<double>{0.7, 0.4});
  cfg.cluster.rates = {0.05, 0.05};
  return cfg;
}

}  // namespace

TEST_CASE("emergence step matches term-by-term expansion") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    const auto spec = oracle::random_spec(5, 2, 2, 2, gen);
    InformationState st;
    st.z = Eigen::VectorXd::NullaryExpr(2, [&] { return z(gen); });
    st.theta = Eigen::MatrixXd::NullaryExpr(5, 2, [&] { return z(gen); });
    st.factor_returns = Eigen::VectorXd::NullaryExpr(2, [&] { return 0.05 * z(gen); });
    const Eigen::VectorXd er = Eigen::VectorXd::NullaryExpr(2, [&] { return 0.01 * z(gen); });
    const std::vector<int> labels{0, 1, 0, 2, 1};
    const std::vector<double> g{0.3, 0.9, 0.0};
    const Partition p(labels, g);
    ClusterNoiseDraw d;
    d.eta = Eigen::VectorXd::NullaryExpr(3, [&] { return z(gen); });
    d.eps = Eigen::VectorXd::NullaryExpr(5, [&] { return z(gen); });
    const double scale = 0.02;
    const auto out = emergence_step(spec, st, p, d, er, scale);
    for (int i = 0; i < 5; ++i) {
      double v = spec.alpha0(i);
      for (int k = 0; k < 2; ++k) v += spec.alpha1(i, k) * st.z(k);
      for (int q = 0; q < 2; ++q) {
        double beta = spec.b0(i, q);
        for (int k = 0; k < 2; ++k) beta += spec.b2[k](i, q) * st.z(k);
        for (int m = 0; m < 2; ++m) beta += spec.b1(m, q) * st.theta(i, m);
        v += beta * (st.factor_returns(q) - er(q));
      }
      const double gi = g[labels[i]];
      v += scale * (gi * d.eta(labels[i]) + std::sqrt(1 - gi * gi) * d.eps(i));
      CHECK(std::abs(out(i) - v) <= 1e-12 * std::max(1.0, std::abs(v)));
    }
    CHECK_THROWS_AS(emergence_step(spec, st, p, d, Eigen::VectorXd::Zero(3)), ShapeError);
  }
}

TEST_CASE("emergence reductions") {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> z;
  auto spec = oracle::random_spec(4, 1, 0, 0, gen);
  spec.alpha0.setZero();
  InformationState st{Eigen::VectorXd(0), Eigen::MatrixXd(4, 0), Eigen::VectorXd::Constant(1, 0.03)};
  const Eigen::VectorXd er = Eigen::VectorXd::Constant(1, 0.01);
  ClusterNoiseDraw d;
  d.eta = Eigen::VectorXd::NullaryExpr(2, [&] { return z(gen); });
  d.eps = Eigen::VectorXd::NullaryExpr(4, [&] { return z(gen); });

  // g = 0: plain factor residual model.
  const auto g0 = Partition::blocks(std::vector<std::size_t>{2, 2}, std::vector<double>{0.0, 0.0});
  const Eigen::VectorXd plain = spec.b0 * (st.factor_returns - er) + d.eps;
  CHECK(emergence_step(spec, st, g0, d, er) == plain);

  // beta = 0, alpha = 0, g = 1: every member moves by its cluster's eta.
  const auto zero = FactorModelSpec::zeros(4, 1, 0, 0);
  const auto g1 = Partition::blocks(std::vector<std::size_t>{2, 2}, std::vector<double>{1.0, 1.0});
  const auto out = emergence_step(zero, st, g1, d, er);
  CHECK(out(0) == d.eta(0));
  CHECK(out(1) == d.eta(0));
  CHECK(out(2) == d.eta(1));
  CHECK(out(3) == d.eta(1));
}

TEST_CASE("composed noise has unit variance for every coupling") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  const int n = 200000;
  for (double g : {0.0, 0.3, 0.8, 1.0}) {
    double s = 0, s2 = 0;
    for (int k = 0; k < n; ++k) {
      const double x = compose_cluster_noise(g, z(gen), z(gen));
      s += x;
      s2 += x * x;
    }
    const double var = s2 / n - (s / n) * (s / n);
    CHECK(std::abs(var - 1.0) < 5 * std::sqrt(2.0 / n));
  }
}

TEST_CASE("zero horizon returns the initial prices") {
  auto cfg = ScenarioConfig::defaults(3, 0);
  cfg.initial_prices << 10, 20, 30;
  const auto out = run_scenario(cfg);
  CHECK(out.returns.rows() == 0);
  CHECK(out.prices.rows() == 1);
  CHECK(out.prices.row(0).transpose() == cfg.initial_prices);
  CHECK(out.partitions.empty());
}

TEST_CASE("prices compound returns and stay positive") {
  const auto cfg = layered_config(300);
  const auto out = run_scenario(cfg);
  CHECK((out.prices.array() > 0).all());
  for (Eigen::Index t = 0; t < 300; ++t)
    for (Eigen::Index i = 0; i < 6; ++i)
      CHECK(std::log(out.prices(t + 1, i) / out.prices(t, i)) == doctest::Approx(out.returns(t, i)).epsilon(1e-9));
  CHECK(out.partitions.size() == 300);
  CHECK(out.theta.size() == 300);
}

TEST_CASE("realised returns follow the unified equation with composed noise") {
  // Replays one step from the recorded state and the documented streams.
  auto cfg = layered_config(1);
  cfg.cluster.rates = {0.0, 0.0};
  const auto out = run_scenario(cfg);
  RandomStream eta(cfg.master_seed, "cluster_eta", 0);
  const double e0 = eta.normal(), e1 = eta.normal();
  Eigen::VectorXd noise(6);
  for (int i = 0; i < 6; ++i) {
    RandomStream idio(cfg.master_seed, "idio", static_cast<std::uint64_t>(i));
    const double g = i < 3 ? 0.7 : 0.4;
    noise(i) = 0.01 * compose_cluster_noise(g, i < 3 ? e0 : e1, idio.normal());
  }
  const InformationState st{out.z.row(0).transpose(), out.theta[0], out.factors.row(0).transpose()};
  const Eigen::VectorXd want = unified_return(cfg.factor.spec, st, noise);
  CHECK(out.returns.row(0).transpose() == want);

  // Which equals E[r] plus the emergence right-hand side.
  ClusterNoiseDraw d;
  d.eta = Eigen::Vector2d(e0, e1);
  d.eps = (noise.array() * 0).matrix();
  for (int i = 0; i < 6; ++i) {
    RandomStream idio(cfg.master_seed, "idio", static_cast<std::uint64_t>(i));
    d.eps(i) = idio.normal();
  }
  const Eigen::VectorXd decomposed =
      predict_shared_risk(cfg.factor.spec, st, cfg.factor.mean) +
      emergence_step(cfg.factor.spec, st, cfg.cluster.initial, d, cfg.factor.mean, 0.01) -
      Eigen::VectorXd::NullaryExpr(6, [&](Eigen::Index i) { return conditional_alpha(cfg.factor.spec, static_cast<std::size_t>(i), st.z); });
  for (int i = 0; i < 6; ++i) CHECK(decomposed(i) == doctest::Approx(want(i)).epsilon(1e-12));
}

TEST_CASE("zero coupling is bit-identical to the factor-only path") {
  auto cfg = layered_config(400);
  cfg.cluster.initial = Partition::blocks(std::vector<std::size_t>{3, 3}, std::vector<double>{0.0, 0.0});
  cfg.cluster.rates = {0.3, 0.3};
  const auto a = run_scenario(cfg);
  const auto b = run_factor_only(cfg);
  CHECK(a.returns == b.returns);
  CHECK(a.prices == b.prices);
  CHECK(a.factors == b.factors);
  CHECK(a.z == b.z);
  for (std::size_t t = 0; t < a.theta.size(); ++t) REQUIRE(a.theta[t] == b.theta[t]);
}

TEST_CASE("runs are deterministic across repeats and thread counts") {
  const auto g = layered_config(200);
  CHECK(run_scenario(g) == run_scenario(g));
  CHECK(run_scenario(g, {1}) == run_scenario(g, {8}));

  auto s = spin_config(4, 300);
  s.cluster.initial = Partition::single_cluster(4, 0.5);
  const auto one = run_scenario(s, {1});
  CHECK(one == run_scenario(s, {8}));
  CHECK(one.magnetization.rows() == 300);

  auto other = g;
  other.master_seed = 32;
  CHECK_FALSE(run_scenario(other) == run_scenario(g));
}

TEST_CASE("interventions act only from their time on") {
  const auto base_cfg = layered_config(300);
  const auto base = run_scenario(base_cfg);

  auto with_empty = base_cfg;
  with_empty.interventions.clear();
  CHECK(run_scenario(with_empty) == base);

  auto cfg = base_cfg;
  cfg.interventions.push_back({120, "b0[1,*]", 2.5, 0});
  const auto out = run_scenario(cfg);
  CHECK(out.returns.topRows(120) == base.returns.topRows(120));
  CHECK(out.returns(120, 1) != base.returns(120, 1));
  // Other assets are untouched.
  CHECK(out.returns.col(0) == base.returns.col(0));
  REQUIRE(out.events.size() == 2);
  CHECK(out.events[0].time == 120);
  CHECK(out.events[0].path == "b0[1,0]");
  CHECK(out.events[0].before == base_cfg.factor.spec.b0(1, 0));
  CHECK(out.events[0].after == 2.5);
  CHECK(out.events[1].path == "b0[1,1]");
}

TEST_CASE("spin interventions stay local in time and asset") {
  auto cfg = spin_config(3, 400);
  const auto base = run_scenario(cfg);
  cfg.interventions.push_back({150, "spin.alpha[2]", 2 * cfg.spin.lattice.global_coupling, 0});
  const auto out = run_scenario(cfg);
  CHECK(out.magnetization.topRows(150) == base.magnetization.topRows(150));
  CHECK(out.magnetization.col(0) == base.magnetization.col(0));
  CHECK_FALSE(out.magnetization.col(2) == base.magnetization.col(2));
  REQUIRE(out.events.size() == 1);
  CHECK(out.events[0].path == "spin.alpha[2]");
}

TEST_CASE("switching clusters off removes within-cluster correlation") {
  auto cfg = ScenarioConfig::defaults(6, 2100);
  cfg.master_seed = 41;
  cfg.cluster.initial = Partition::blocks(std::vector<std::size_t>{3, 3}, std::vector<double>{0.8, 0.8});
  cfg.interventions.push_back({100, "cluster.g[*]", 0.0, 0});
  const auto out = run_scenario(cfg);
  const Eigen::MatrixXd before = out.returns.topRows(100);
  const Eigen::MatrixXd after = out.returns.bottomRows(2000);
  const std::vector<int> labels{0, 0, 0, 1, 1, 1};
  const auto pre = cluster_correlations(before, labels);
  const auto post = cluster_correlations(after, labels);
  CHECK(pre.within > 0.4);
  CHECK(std::abs(post.within) < noise_band(2000));
  REQUIRE(out.events.size() == 2);
  CHECK(out.events[0].before == 0.8);
  CHECK(out.events[0].after == 0.0);
}

TEST_CASE("missing cluster index is logged as NaN") {
  auto cfg = ScenarioConfig::defaults(3, 10);
  cfg.cluster.initial = Partition::single_cluster(3, 0.5);
  cfg.interventions.push_back({4, "cluster.g[2]", 0.1, 0});
  const auto out = run_scenario(cfg);
  REQUIRE(out.events.size() == 1);
  CHECK(std::isnan(out.events[0].before));
  CHECK(std::isnan(out.events[0].after));
}

TEST_CASE("Gaussian end-to-end run recovers b0") {
  auto cfg = ScenarioConfig::defaults(20, 3000, 2);
  cfg.master_seed = 51;
  std::mt19937_64 gen(51);
  std::normal_distribution<double> z;
  for (Eigen::Index i = 0; i < 20; ++i)
    for (Eigen::Index p = 0; p < 2; ++p) cfg.factor.spec.b0(i, p) = 1.0 + 0.5 * z(gen);
  cfg.factor.mean << 0.005, 0.003;
  cfg.factor.vol << 0.04, 0.03;
  cfg.factor.noise_scale = 0.01;
  const auto out = run_scenario(cfg);
  const auto cal = calibrate_unified(out.panel());
  int covered = 0;
  for (Eigen::Index i = 0; i < 20; ++i)
    for (Eigen::Index p = 0; p < 2; ++p)
      covered += std::abs(cal.estimate.b0(i, p) - cfg.factor.spec.b0(i, p)) <= 3 * cal.std_error.b0(i, p);
  CHECK(covered >= 38);
}

TEST_CASE("spin noise is standardized") {
  auto cfg = spin_config(1, 5000);
  const auto s = spin_noise_series(cfg, 0);
  double m = 0, v = 0;
  for (double e : s.eps) m += e;
  m /= 5000;
  for (double e : s.eps) v += (e - m) * (e - m);
  v /= 5000;
  CHECK(std::abs(m) < 0.2);
  CHECK(v > 0.5);
  CHECK(v < 2.0);
  for (double mg : s.magnetization) REQUIRE(std::abs(mg) <= 1.0);
}

TEST_CASE("parameter paths") {
  const auto p = ParameterPath::parse("b2[3,*,1]");
  CHECK(p.name == "b2");
  REQUIRE(p.index.size() == 3);
  CHECK(*p.index[0] == 3);
  CHECK_FALSE(p.index[1].has_value());
  CHECK(*p.index[2] == 1);
  CHECK(p.to_string() == "b2[3,*,1]");
  CHECK(ParameterPath::parse("noise_scale").index.empty());
  CHECK_THROWS_AS(ParameterPath::parse("b0[1"), ConfigError);
  CHECK_THROWS_AS(ParameterPath::parse("b0[x]"), ConfigError);
}

TEST_CASE("invalid interventions fail validation before running") {
  auto base = ScenarioConfig::defaults(3, 50, 2, 1, 1);
  auto bad = [&](const std::string& path, std::size_t t, double v = 1.0) {
    auto cfg = base;
    cfg.interventions.push_back({t, path, v, 7});
    return cfg;
  };
  CHECK_THROWS_WITH_AS(run_scenario(bad("nonsense", 5)), doctest::Contains("line 7"), ConfigError);
  CHECK_THROWS_AS(run_scenario(bad("b0[3,0]", 5)), ConfigError);
  CHECK_THROWS_AS(run_scenario(bad("b0[0,0,0]", 5)), ConfigError);
  CHECK_THROWS_AS(run_scenario(bad("b0[0,0]", 50)), ConfigError);
  CHECK_THROWS_AS(run_scenario(bad("spin.alpha", 5)), ConfigError);  // Gaussian source
  CHECK_THROWS_AS(run_scenario(bad("cluster.g[0]", 5, 1.5)), ConfigError);
  CHECK_NOTHROW(run_scenario(bad("b2[*,0,1]", 5)));

  auto cfg = base;
  cfg.initial_prices(1) = 0.0;
  CHECK_THROWS_AS(run_scenario(cfg), ConfigError);
}
