#include "hiermarket/spin_market.hpp"

#include <array>
#include <cmath>
#include <string>

#include "hiermarket/errors.hpp"

namespace hiermarket {

namespace {

template <typename Enum, std::size_t Size>
Enum parse_enum(std::string_view name, const std::array<std::pair<std::string_view, Enum>, Size>& table,
                std::string_view what) {
  for (const auto& [key, value] : table) {
    if (key == name) return value;
  }
  throw DomainError("unknown " + std::string(what) + " '" + std::string(name) + "'");
}

constexpr std::array<std::pair<std::string_view, FieldModel>, 2> kFieldModels{
    {{"simplified", FieldModel::simplified}, {"strategic", FieldModel::strategic}}};
constexpr std::array<std::pair<std::string_view, UpdateOrder>, 2> kUpdateOrders{
    {{"sequential", UpdateOrder::sequential}, {"synchronous", UpdateOrder::synchronous}}};
constexpr std::array<std::pair<std::string_view, SpinInit>, 3> kSpinInits{
    {{"random", SpinInit::random}, {"all_up", SpinInit::all_up}, {"all_down", SpinInit::all_down}}};
constexpr std::array<std::pair<std::string_view, StrategyInit>, 3> kStrategyInits{
    {{"fundamentalist", StrategyInit::fundamentalist},
     {"chartist", StrategyInit::chartist},
     {"random", StrategyInit::random}}};

template <typename Enum, std::size_t Size>
std::string_view enum_name(Enum value, const std::array<std::pair<std::string_view, Enum>, Size>& table) {
  for (const auto& [key, v] : table) {
    if (v == value) return key;
  }
  return "?";
}

}  // namespace

FieldModel parse_field_model(std::string_view name) { return parse_enum(name, kFieldModels, "field model"); }
UpdateOrder parse_update_order(std::string_view name) { return parse_enum(name, kUpdateOrders, "update order"); }
SpinInit parse_spin_init(std::string_view name) { return parse_enum(name, kSpinInits, "spin init"); }
StrategyInit parse_strategy_init(std::string_view name) {
  return parse_enum(name, kStrategyInits, "strategy init");
}
std::string_view to_string(FieldModel f) { return enum_name(f, kFieldModels); }
std::string_view to_string(UpdateOrder o) { return enum_name(o, kUpdateOrders); }
std::string_view to_string(SpinInit s) { return enum_name(s, kSpinInits); }
std::string_view to_string(StrategyInit s) { return enum_name(s, kStrategyInits); }

void SpinMarketParams::validate() const {
  if (side < 1) throw DomainError("spin market: lattice side must be >= 1");
  if (!(nn_coupling >= 0.0) || !std::isfinite(nn_coupling))
    throw DomainError("spin market: nearest-neighbour coupling J must be finite and >= 0");
  if (!(global_coupling >= 0.0) || !std::isfinite(global_coupling))
    throw DomainError("spin market: global coupling alpha must be finite and >= 0");
  if (!(inverse_temperature >= 0.0) || !std::isfinite(inverse_temperature))
    throw DomainError("spin market: inverse temperature beta must be finite and >= 0");
}

double spin_up_probability(double inverse_temperature, double field) noexcept {
  return 1.0 / (1.0 + std::exp(-2.0 * inverse_temperature * field));
}

SpinMarketState::SpinMarketState(const SpinMarketParams& params, RandomStream stream)
    : params_(params), stream_(stream) {
  params_.validate();
  const auto n = static_cast<std::size_t>(params_.side) * static_cast<std::size_t>(params_.side);
  spins_.resize(n);
  strategies_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (params_.spin_init) {
      case SpinInit::random: spins_[i] = stream_.uniform() < 0.5 ? 1 : -1; break;
      case SpinInit::all_up: spins_[i] = 1; break;
      case SpinInit::all_down: spins_[i] = -1; break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    switch (params_.strategy_init) {
      case StrategyInit::fundamentalist: strategies_[i] = 1; break;
      case StrategyInit::chartist: strategies_[i] = -1; break;
      case StrategyInit::random: strategies_[i] = stream_.uniform() < 0.5 ? 1 : -1; break;
    }
  }
  for (auto s : spins_) spin_sum_ += s;
}

SpinMarketState::SpinMarketState(const SpinMarketParams& params, std::vector<std::int8_t> spins,
                                 std::vector<std::int8_t> strategies, RandomStream stream)
    : params_(params), spins_(std::move(spins)), strategies_(std::move(strategies)), stream_(stream) {
  params_.validate();
  const auto n = static_cast<std::size_t>(params_.side) * static_cast<std::size_t>(params_.side);
  if (spins_.size() != n || strategies_.size() != n) {
    throw ShapeError("spin market: expected " + std::to_string(n) + " spins and strategies");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if ((spins_[i] != 1 && spins_[i] != -1) || (strategies_[i] != 1 && strategies_[i] != -1)) {
      throw DomainError("spin market: spins and strategies must be +1 or -1 (site " + std::to_string(i) + ")");
    }
    spin_sum_ += spins_[i];
  }
}

void SpinMarketState::set_params(const SpinMarketParams& params) {
  if (params.side != params_.side) throw ShapeError("spin market: lattice side cannot change mid-run");
  params.validate();
  params_ = params;
}

void SpinMarketState::check_index(std::size_t i) const {
  if (i >= spins_.size()) {
    throw IndexError("spin market: site " + std::to_string(i) + " out of range [0, " +
                     std::to_string(spins_.size()) + ")");
  }
}

std::array<std::size_t, 4> SpinMarketState::neighbours(std::size_t i) const {
  check_index(i);
  const auto l = static_cast<std::size_t>(params_.side);
  const std::size_t row = i / l;
  const std::size_t col = i % l;
  return {((row + l - 1) % l) * l + col, ((row + 1) % l) * l + col, row * l + (col + l - 1) % l,
          row * l + (col + 1) % l};
}

double SpinMarketState::local_field(std::size_t i) const {
  const auto nn = neighbours(i);
  int neighbour_sum = 0;
  for (auto j : nn) neighbour_sum += spins_[j];
  const double m = magnetization();
  const double local = params_.nn_coupling * neighbour_sum;
  if (params_.field == FieldModel::strategic) {
    return local - params_.global_coupling * strategies_[i] * m;
  }
  return local - params_.global_coupling * spins_[i] * std::abs(m);
}

int SpinMarketState::spin_update(std::size_t i, double u) const {
  return u < spin_up_probability(params_.inverse_temperature, local_field(i)) ? 1 : -1;
}

int SpinMarketState::strategy_switch(std::size_t i) const {
  check_index(i);
  const double product = params_.global_coupling * spins_[i] * strategies_[i] * static_cast<double>(spin_sum_);
  return product < 0.0 ? -strategies_[i] : strategies_[i];
}

void SpinMarketState::set_spin(std::size_t i, int value) {
  spin_sum_ += value - spins_[i];
  spins_[i] = static_cast<std::int8_t>(value);
}

double SpinMarketState::step() {
  const std::size_t n = spins_.size();
  const bool strategic = params_.field == FieldModel::strategic;
  if (params_.order == UpdateOrder::sequential) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(stream_.below(n));
      const double u = stream_.uniform();
      const int new_strategy = strategic ? strategy_switch(i) : strategies_[i];
      const int new_spin = spin_update(i, u);
      set_spin(i, new_spin);
      strategies_[i] = static_cast<std::int8_t>(new_strategy);
    }
  } else {
    std::vector<std::int8_t> next_spins(n);
    std::vector<std::int8_t> next_strategies(strategies_);
    for (std::size_t i = 0; i < n; ++i) {
      next_spins[i] = static_cast<std::int8_t>(spin_update(i, stream_.uniform()));
      if (strategic) next_strategies[i] = static_cast<std::int8_t>(strategy_switch(i));
    }
    spins_ = std::move(next_spins);
    strategies_ = std::move(next_strategies);
    spin_sum_ = 0;
    for (auto s : spins_) spin_sum_ += s;
  }
  ++time_;
  return magnetization();
}

PriceSeries prices_from_magnetization(std::span<const double> magnetization, double p0, double c) {
  if (!(p0 > 0.0) || !std::isfinite(p0)) throw DomainError("prices: initial price must be positive");
  if (!(c > 0.0) || !std::isfinite(c)) throw DomainError("prices: price scale c must be positive");
  PriceSeries out;
  out.price_scale = c;
  out.log_prices.reserve(magnetization.size() + 1);
  out.returns.reserve(magnetization.size());
  out.log_prices.push_back(std::log(p0));
  for (double m : magnetization) {
    const double x = c * m;
    out.returns.push_back(x);
    out.log_prices.push_back(out.log_prices.back() + x);
  }
  return out;
}

}  // namespace hiermarket
