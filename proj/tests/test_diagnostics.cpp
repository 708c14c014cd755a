#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hiermarket/diagnostics.hpp"
#include "hiermarket/errors.hpp"

using namespace hiermarket;

namespace {

// Oracles draw from std::mt19937_64 so they share nothing with the library RNG.
std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> d;
  std::vector<double> x(n);
  for (auto& v : x) v = d(gen);
  return x;
}

std::vector<double> ar1(std::size_t n, double phi, std::uint64_t seed) {
  auto e = normals(n, seed);
  std::vector<double> x(n);
  x[0] = e[0] / std::sqrt(1 - phi * phi);
  for (std::size_t t = 1; t < n; ++t) x[t] = phi * x[t - 1] + e[t];
  return x;
}

std::vector<double> pareto(std::size_t n, double a, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = std::pow(1.0 - u(gen), -1.0 / a);
  return x;
}

std::vector<double> student_t(std::size_t n, double nu, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::student_t_distribution<double> d(nu);
  std::vector<double> x(n);
  for (auto& v : x) v = d(gen);
  return x;
}

}  // namespace

TEST_CASE("acf of white noise stays inside the band") {
  // 95% of lags inside on average; pooling 100 series x 50 lags keeps the
  // binomial spread near 0.3%, so 94% sits three spreads below.
  int inside = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto x = normals(10000, 100 + s);
    const auto r = acf(x, 50);
    CHECK(r[0] == 1.0);
    for (std::size_t l = 1; l <= 50; ++l) inside += std::abs(r[l]) < noise_band(x.size());
  }
  CHECK(inside >= 4700);
}

TEST_CASE("alternating series has lag-one autocorrelation -1") {
  std::vector<double> x(1000);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = t % 2 ? 1.0 : -1.0;
  const auto r = acf(x, 3);
  CHECK(r[1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(r[2] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("acf of AR(1) matches phi^lag") {
  const auto x = ar1(50000, 0.5, 3);
  const auto r = acf(x, 5);
  for (int l = 1; l <= 5; ++l) CHECK(std::abs(r[static_cast<std::size_t>(l)] - std::pow(0.5, l)) <= 0.02);
}

TEST_CASE("acf errors") {
  std::vector<double> c(100, 2.5);
  CHECK_THROWS_AS(acf(c, 5), UndefinedVarianceError);
  std::vector<double> s{1, 2, 3};
  CHECK_THROWS_AS(acf(s, 2), SampleSizeError);
  CHECK_NOTHROW(acf(s, 1));
}

TEST_CASE("acf is invariant to affine maps") {
  const auto x = ar1(2000, 0.3, 5);
  std::vector<double> y(x.size()), z(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    y[t] = -4.0 * x[t];  // power-of-two scale: exact in floating point
    z[t] = 3.7 * x[t] + 120.0;
  }
  const auto a = acf(x, 10), b = acf(y, 10), c = acf(z, 10);
  for (std::size_t l = 0; l <= 10; ++l) {
    CHECK(a[l] == b[l]);
    CHECK(a[l] == doctest::Approx(c[l]).epsilon(1e-10));
  }
}

TEST_CASE("excess kurtosis oracles") {
  CHECK(std::abs(excess_kurtosis(normals(100000, 21))) <= 0.1);
  std::vector<double> two(1000);
  for (std::size_t t = 0; t < two.size(); ++t) two[t] = t % 2 ? 1.0 : -1.0;
  CHECK(excess_kurtosis(two) == -2.0);
  // t(nu): 6 / (nu - 4). With nu = 9 the eighth moment is finite and the
  // sample estimate converges at the usual rate.
  CHECK(std::abs(excess_kurtosis(student_t(100000, 9.0, 8)) - 1.2) <= 0.15);
  std::vector<double> c(10, 1.0);
  CHECK_THROWS_AS(excess_kurtosis(c), UndefinedVarianceError);
  CHECK_THROWS_AS(excess_kurtosis(std::vector<double>{1, 2, 3}), SampleSizeError);
}

// t(5) has no eighth moment, so the sample kurtosis at T = 100,000 is skewed
// low (median near 4.7); a single draw lands in 6 +- 1 only about a quarter of
// the time. Kept as a reported, non-gating check.
TEST_CASE("excess kurtosis of t(5) near 6" * doctest::may_fail()) {
  CHECK(std::abs(excess_kurtosis(student_t(100000, 5.0, 1)) - 6.0) <= 1.0);
}

TEST_CASE("excess kurtosis is affine invariant") {
  const auto x = student_t(5000, 7.0, 2);
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) y[t] = -0.25 * x[t] + 9.0;
  CHECK(excess_kurtosis(y) == doctest::Approx(excess_kurtosis(x)).epsilon(1e-9));
}

TEST_CASE("Hill estimator oracles") {
  CHECK(std::abs(hill_tail_index(pareto(100000, 3.0, 4), 0.05) - 3.0) <= 0.3);

  // Exponential tail: the Hill estimate grows like ln(1/k) and exceeds 5 for
  // a tail fraction of 0.5%.
  std::mt19937_64 gen(9);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> x(100000);
  for (auto& v : x) v = e(gen);
  CHECK(hill_tail_index(x, 0.005) > 5.0);

  std::vector<double> c(1000, 3.0);
  CHECK_THROWS_AS(hill_tail_index(c, 0.05), SampleSizeError);
  CHECK_THROWS_AS(hill_tail_index(pareto(500, 3.0, 1), 0.05), SampleSizeError);
}

TEST_CASE("Hill estimator is scale invariant and reads both tails") {
  const auto x = student_t(40000, 3.0, 6);
  std::vector<double> y(x.size()), neg(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    y[t] = 8.0 * x[t];
    neg[t] = -x[t];
  }
  CHECK(hill_tail_index(y, 0.05) == doctest::Approx(hill_tail_index(x, 0.05)).epsilon(1e-12));
  CHECK(hill_tail_index(neg, 0.05, Tail::lower) == doctest::Approx(hill_tail_index(x, 0.05, Tail::upper)).epsilon(1e-12));
}

TEST_CASE("jump count uses the sample standard deviation") {
  std::vector<double> x(1000);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = t % 2 ? 0.1 : -0.1;
  CHECK(jump_count(x, 4.0) == 0);
  x[10] = 50.0;
  x[500] = -50.0;
  CHECK(jump_count(x, 4.0) == 2);
}

TEST_CASE("within and cross cluster correlations") {
  // Two exact copies per cluster: within = 1, cross = independent noise.
  const auto a = normals(20000, 1), b = normals(20000, 2);
  Eigen::MatrixXd panel(20000, 4);
  for (Eigen::Index t = 0; t < 20000; ++t) panel.row(t) << a[t], 2 * a[t], b[t], -b[t] + 0 * a[t];
  std::vector<int> labels{0, 0, 1, 1};
  const auto s = cluster_correlations(panel, labels);
  CHECK(s.within_pairs == 2);
  CHECK(s.cross_pairs == 4);
  CHECK(s.within == doctest::Approx(0.0).epsilon(1e-12));  // +1 and -1 average out
  CHECK(std::abs(s.cross) < 0.03);
}

TEST_CASE("stylized facts report") {
  const auto x = student_t(20000, 4.0, 3);
  const auto r = stylized_facts(x);
  CHECK(r.n == x.size());
  CHECK(r.lags == std::vector<std::size_t>{1, 5, 10, 20});
  CHECK(r.band == doctest::Approx(1.96 / std::sqrt(20000.0)));
  CHECK(r.fat_tails());
  CHECK_FALSE(r.volatility_clustering());
  REQUIRE(r.hill_upper);
  CHECK(*r.hill_upper > 2.5);
  CHECK(r.hill_by_k.size() == 4);
}
