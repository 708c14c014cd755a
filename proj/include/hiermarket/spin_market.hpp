#pragma once

// Single-asset spin market: agents on a periodic square lattice hold a
// demand spin s_i = ±1 and a strategy C_i = ±1 (+1 fundamentalist,
// -1 chartist). Magnetization is net demand and drives the log price.

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "hiermarket/random.hpp"

namespace hiermarket {

enum class FieldModel {
  simplified,  // h_i = sum_nn J s_j - alpha s_i |M|   (instantaneous strategies)
  strategic,   // h_i = sum_nn J s_j - alpha C_i M      (with strategy switching)
};

enum class UpdateOrder {
  sequential,   // random-sequential single-site heat bath
  synchronous,  // all sites from the previous configuration
};

enum class StrategyInit { fundamentalist, chartist, random };
enum class SpinInit { random, all_up, all_down };

// Defaults sit in the intermittent regime: with X = c M(t-1), fat tails and
// volatility clustering without linear autocorrelation at lag 10 need the
// strong global coupling and simultaneous updates. Random-sequential updates
// at any (alpha, beta) we scanned leave M either too persistent or too
// Gaussian.
struct SpinMarketParams {
  int side = 32;
  double nn_coupling = 1.0;
  double global_coupling = 70.0;
  double inverse_temperature = 0.76;
  FieldModel field = FieldModel::simplified;
  UpdateOrder order = UpdateOrder::synchronous;
  SpinInit spin_init = SpinInit::random;
  StrategyInit strategy_init = StrategyInit::fundamentalist;

  // Throws DomainError when a value is outside its admissible range.
  void validate() const;
};

FieldModel parse_field_model(std::string_view name);
UpdateOrder parse_update_order(std::string_view name);
SpinInit parse_spin_init(std::string_view name);
StrategyInit parse_strategy_init(std::string_view name);
std::string_view to_string(FieldModel f);
std::string_view to_string(UpdateOrder o);
std::string_view to_string(SpinInit s);
std::string_view to_string(StrategyInit s);

/// Heat-bath probability of the up state: 1 / (1 + exp(-2 beta h)).
double spin_up_probability(double inverse_temperature, double field) noexcept;

class SpinMarketState {
 public:
  /// Draws the initial configuration from `stream`, which the state then owns.
  SpinMarketState(const SpinMarketParams& params, RandomStream stream);

  /// Explicit configuration; sizes must equal side².
  SpinMarketState(const SpinMarketParams& params, std::vector<std::int8_t> spins,
                  std::vector<std::int8_t> strategies, RandomStream stream);

  int side() const noexcept { return params_.side; }
  std::size_t size() const noexcept { return spins_.size(); }
  std::int64_t time() const noexcept { return time_; }

  const SpinMarketParams& params() const noexcept { return params_; }
  // Replaces coupling/temperature/mode settings mid-run; the lattice side is fixed.
  void set_params(const SpinMarketParams& params);

  std::span<const std::int8_t> spins() const noexcept { return spins_; }
  std::span<const std::int8_t> strategies() const noexcept { return strategies_; }
  std::int64_t spin_sum() const noexcept { return spin_sum_; }
  double magnetization() const noexcept {
    return static_cast<double>(spin_sum_) / static_cast<double>(spins_.size());
  }

  /// The four periodic neighbours of site i (up, down, left, right).
  std::array<std::size_t, 4> neighbours(std::size_t i) const;

  double local_field(std::size_t i) const;
  /// New spin for site i given a uniform draw u in [0, 1).
  int spin_update(std::size_t i, double u) const;
  /// New strategy for site i: flips iff alpha s_i C_i sum_j s_j < 0.
  int strategy_switch(std::size_t i) const;

  /// One sweep of N single-site updates. Returns M after the sweep.
  double step();

  RandomStream& stream() noexcept { return stream_; }

 private:
  void check_index(std::size_t i) const;
  void set_spin(std::size_t i, int value);

  SpinMarketParams params_;
  std::vector<std::int8_t> spins_;
  std::vector<std::int8_t> strategies_;
  std::int64_t spin_sum_ = 0;
  std::int64_t time_ = 0;
  RandomStream stream_;
};

struct PriceSeries {
  double price_scale = 0.0;
  std::vector<double> log_prices;  // log p(0) .. log p(n)
  std::vector<double> returns;     // X(t) = log p(t) - log p(t-1), t = 1..n
};

/// p(t+1) = p(t) exp(c M(t)); returns X(t) = c M(t-1).
PriceSeries prices_from_magnetization(std::span<const double> magnetization, double p0, double c);

}  // namespace hiermarket
