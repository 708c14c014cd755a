#include "hiermarket/hierarchy_engine.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <limits>
#include <thread>

#include "hiermarket/errors.hpp"

namespace hiermarket {

NoiseSource parse_noise_source(std::string_view name) {
  if (name == "gaussian") return NoiseSource::gaussian;
  if (name == "spin_lattice") return NoiseSource::spin_lattice;
  throw DomainError("unknown noise source '" + std::string(name) + "' (expected gaussian or spin_lattice)");
}

std::string_view to_string(NoiseSource s) { return s == NoiseSource::gaussian ? "gaussian" : "spin_lattice"; }

// ---------------------------------------------------------------------------
// Paths

const std::vector<std::pair<std::string, std::size_t>>& intervention_targets() {
  static const std::vector<std::pair<std::string, std::size_t>> targets{
      {"spin.alpha", 1},     {"spin.beta", 1},   {"spin.J", 1},         {"cluster.g", 1},
      {"cluster.split_prob", 0}, {"cluster.merge_prob", 0}, {"factor.mean", 1}, {"factor.vol", 1},
      {"noise_scale", 0},    {"alpha0", 1},      {"alpha1", 2},         {"b0", 2},
      {"b1", 2},             {"b2", 3},          {"z_phi", 0},          {"theta_phi", 0},
      {"z_offset", 1},       {"theta_offset", 1},
  };
  return targets;
}

namespace {

std::size_t arity_of(const std::string& name) {
  for (const auto& [n, a] : intervention_targets()) {
    if (n == name) return a;
  }
  throw ConfigError("unknown intervention path '" + name + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ParameterPath ParameterPath::parse(const std::string& text) {
  ParameterPath out;
  const auto open = text.find('[');
  out.name = trim(text.substr(0, open));
  const std::size_t arity = arity_of(out.name);
  if (open == std::string::npos) {
    out.index.assign(arity, std::nullopt);
    return out;
  }
  const auto close = text.find(']', open);
  if (close == std::string::npos || trim(text.substr(close + 1)).size() != 0) {
    throw ConfigError("malformed intervention path '" + text + "'");
  }
  std::string_view inner(text.data() + open + 1, close - open - 1);
  while (true) {
    const auto comma = inner.find(',');
    const std::string token = trim(inner.substr(0, comma));
    if (token == "*") {
      out.index.emplace_back(std::nullopt);
    } else {
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
        throw ConfigError("bad index '" + token + "' in intervention path '" + text + "'");
      }
      out.index.emplace_back(v);
    }
    if (comma == std::string_view::npos) break;
    inner.remove_prefix(comma + 1);
  }
  if (out.index.size() != arity) {
    throw ConfigError("intervention path '" + text + "' needs " + std::to_string(arity) + " indices");
  }
  return out;
}

std::string ParameterPath::to_string() const {
  if (index.empty()) return name;
  std::string s = name + "[";
  for (std::size_t a = 0; a < index.size(); ++a) {
    if (a) s += ",";
    s += index[a] ? std::to_string(*index[a]) : "*";
  }
  return s + "]";
}

namespace {

// Extent of each index axis; cluster.g is bounded by the number of assets.
std::vector<std::size_t> extents(const std::string& name, const FactorModelSpec& spec, std::size_t n_assets) {
  const std::size_t N = n_assets;
  const std::size_t P = spec.n_factors;
  const std::size_t K = spec.n_top_down;
  const std::size_t M = spec.n_bottom_up;
  if (name.rfind("spin.", 0) == 0 || name == "cluster.g" || name == "alpha0") return {N};
  if (name == "factor.mean" || name == "factor.vol") return {P};
  if (name == "alpha1") return {N, K};
  if (name == "b0") return {N, P};
  if (name == "b1") return {M, P};
  if (name == "b2") return {N, K, P};
  if (name == "z_offset") return {K};
  if (name == "theta_offset") return {M};
  return {};
}

void check_value(const std::string& name, double v) {
  auto bad = [&](const char* why) { throw ConfigError("value " + std::to_string(v) + " for " + name + " " + why); };
  if (!std::isfinite(v)) bad("is not finite");
  if (name == "spin.beta" && !(v > 0.0)) bad("must be positive");
  if (name == "spin.alpha" && v < 0.0) bad("must be non-negative");
  if ((name == "cluster.g" || name == "cluster.split_prob" || name == "cluster.merge_prob") && (v < 0.0 || v > 1.0)) {
    bad("must lie in [0, 1]");
  }
  if ((name == "z_phi" || name == "theta_phi") && (v < 0.0 || v >= 1.0)) bad("must lie in [0, 1)");
  if ((name == "factor.vol" || name == "noise_scale") && v < 0.0) bad("must be non-negative");
}

// Every concrete index tuple selected by a path.
std::vector<std::vector<std::size_t>> expand(const ParameterPath& path, const std::vector<std::size_t>& ext) {
  std::vector<std::vector<std::size_t>> out{{}};
  for (std::size_t a = 0; a < path.index.size(); ++a) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& prefix : out) {
      if (path.index[a]) {
        auto v = prefix;
        v.push_back(*path.index[a]);
        next.push_back(std::move(v));
      } else {
        for (std::size_t j = 0; j < ext[a]; ++j) {
          auto v = prefix;
          v.push_back(j);
          next.push_back(std::move(v));
        }
      }
    }
    out = std::move(next);
  }
  return out;
}

std::string concrete(const std::string& name, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return name;
  std::string s = name + "[";
  for (std::size_t a = 0; a < idx.size(); ++a) {
    if (a) s += ",";
    s += std::to_string(idx[a]);
  }
  return s + "]";
}

double* spin_slot(SpinMarketParams& p, const std::string& name) {
  if (name == "spin.alpha") return &p.global_coupling;
  if (name == "spin.beta") return &p.inverse_temperature;
  return &p.nn_coupling;
}

}  // namespace

ScenarioConfig ScenarioConfig::defaults(std::size_t n, std::size_t horizon, std::size_t p, std::size_t k,
                                        std::size_t m) {
  ScenarioConfig cfg;
  cfg.n_assets = n;
  cfg.horizon = horizon;
  cfg.initial_prices = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  cfg.cluster.initial = Partition::singletons(n);
  cfg.factor.spec = FactorModelSpec::zeros(n, p, k, m);
  cfg.factor.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  cfg.factor.vol = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(p));
  cfg.factor.z_offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  cfg.factor.theta_offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  return cfg;
}

void ScenarioConfig::validate() const {
  if (n_assets == 0) throw ConfigError("n_assets must be at least 1");
  const auto N = static_cast<Eigen::Index>(n_assets);
  if (initial_prices.size() != N) throw ConfigError("initial_prices must have n_assets entries");
  for (Eigen::Index i = 0; i < N; ++i) {
    if (!(initial_prices(i) > 0.0) || !std::isfinite(initial_prices(i))) {
      throw ConfigError("initial price of asset " + std::to_string(i) + " must be positive and finite");
    }
  }
  try {
    if (noise_source == NoiseSource::spin_lattice) {
      spin.lattice.validate();
      if (spin.sweeps_per_step == 0) throw ConfigError("spin.sweeps_per_step must be at least 1");
      if (spin.window == 0) throw ConfigError("spin.window must be at least 1");
      if (!(spin.price_scale > 0.0)) throw ConfigError("spin.price_scale must be positive");
    }
    if (cluster.initial.size() != n_assets) throw ConfigError("cluster partition must cover n_assets assets");
    if (cluster.rates.split_prob < 0.0 || cluster.rates.merge_prob < 0.0 ||
        cluster.rates.split_prob + cluster.rates.merge_prob > 1.0) {
      throw ConfigError("cluster split_prob and merge_prob must be non-negative with sum at most 1");
    }
    const auto& f = factor;
    if (f.spec.n_assets != n_assets) throw ConfigError("factor coefficients must cover n_assets assets");
    f.spec.validate();
    const auto P = static_cast<Eigen::Index>(f.spec.n_factors);
    if (f.mean.size() != P || f.vol.size() != P) throw ConfigError("factor mean and vol need one entry per factor");
    if (!f.mean.allFinite() || (f.vol.array() < 0.0).any() || !f.vol.allFinite()) {
      throw ConfigError("factor mean must be finite and vol non-negative");
    }
    if (f.z_offset.size() != static_cast<Eigen::Index>(f.spec.n_top_down) ||
        f.theta_offset.size() != static_cast<Eigen::Index>(f.spec.n_bottom_up)) {
      throw ConfigError("z_offset needs K entries and theta_offset M entries");
    }
    check_value("z_phi", f.z_phi);
    check_value("theta_phi", f.theta_phi);
    check_value("noise_scale", f.noise_scale);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  for (const auto& ev : interventions) {
    try {
      if (ev.time >= horizon) {
        throw ConfigError("intervention time " + std::to_string(ev.time) + " outside [0, " + std::to_string(horizon) +
                          ")");
      }
      const auto path = ParameterPath::parse(ev.path);
      if (path.name.rfind("spin.", 0) == 0 && noise_source != NoiseSource::spin_lattice) {
        throw ConfigError("intervention '" + ev.path + "' needs noise_source spin_lattice");
      }
      const auto ext = extents(path.name, factor.spec, n_assets);
      for (std::size_t a = 0; a < path.index.size(); ++a) {
        if (path.index[a] && *path.index[a] >= ext[a]) {
          throw ConfigError("index " + std::to_string(*path.index[a]) + " out of range in '" + ev.path + "'");
        }
      }
      check_value(path.name, ev.value);
    } catch (const ConfigError& e) {
      if (e.line() != 0 || ev.line == 0) throw;
      throw ConfigError(e.what(), ev.line);
    }
  }
}

EngineState EngineState::initial(const ScenarioConfig& cfg) {
  EngineState s;
  s.n_assets = cfg.n_assets;
  s.factor = cfg.factor;
  s.partition = cfg.cluster.initial;
  s.rates = cfg.cluster.rates;
  if (cfg.noise_source == NoiseSource::spin_lattice) s.spin.assign(cfg.n_assets, cfg.spin.lattice);
  return s;
}

void apply_intervention(EngineState& state, const Intervention& event, std::vector<InterventionEvent>& log) {
  if (event.time != state.t) {
    throw DomainError("intervention for t=" + std::to_string(event.time) + " applied at t=" + std::to_string(state.t));
  }
  const auto path = ParameterPath::parse(event.path);
  check_value(path.name, event.value);
  const auto& name = path.name;
  auto& f = state.factor;
  auto& spec = f.spec;
  const auto ext = extents(name, spec, state.n_assets);
  for (const auto& idx : expand(path, ext)) {
    auto at = [&](std::size_t a) { return static_cast<Eigen::Index>(idx[a]); };
    double* slot = nullptr;
    if (name.rfind("spin.", 0) == 0) {
      if (state.spin.empty()) throw ConfigError("intervention '" + event.path + "' needs noise_source spin_lattice");
      slot = spin_slot(state.spin[idx[0]], name);
    } else if (name == "cluster.g") {
      if (idx[0] >= state.partition.n_clusters()) {
        if (path.index[0]) {
          const double nan = std::numeric_limits<double>::quiet_NaN();
          log.push_back({state.t, concrete(name, idx), nan, nan});
        }
        continue;
      }
      const double before = state.partition.couplings()[idx[0]];
      state.partition.set_coupling(idx[0], event.value);
      log.push_back({state.t, concrete(name, idx), before, event.value});
      continue;
    } else if (name == "cluster.split_prob" || name == "cluster.merge_prob") {
      FissionFusionRates next = state.rates;
      double& target = name == "cluster.split_prob" ? next.split_prob : next.merge_prob;
      const double before = target;
      target = event.value;
      if (next.split_prob + next.merge_prob > 1.0) {
        throw DomainError("intervention at t=" + std::to_string(state.t) + " makes split_prob + merge_prob exceed 1");
      }
      state.rates = next;
      log.push_back({state.t, name, before, event.value});
      continue;
    } else if (name == "factor.mean") {
      slot = &f.mean(at(0));
    } else if (name == "factor.vol") {
      slot = &f.vol(at(0));
    } else if (name == "noise_scale") {
      slot = &f.noise_scale;
    } else if (name == "alpha0") {
      slot = &spec.alpha0(at(0));
    } else if (name == "alpha1") {
      slot = &spec.alpha1(at(0), at(1));
    } else if (name == "b0") {
      slot = &spec.b0(at(0), at(1));
    } else if (name == "b1") {
      slot = &spec.b1(at(0), at(1));
    } else if (name == "b2") {
      slot = &spec.b2[idx[1]](at(0), at(2));
    } else if (name == "z_phi") {
      slot = &f.z_phi;
    } else if (name == "theta_phi") {
      slot = &f.theta_phi;
    } else if (name == "z_offset") {
      slot = &f.z_offset(at(0));
    } else if (name == "theta_offset") {
      slot = &f.theta_offset(at(0));
    }
    log.push_back({state.t, concrete(name, idx), *slot, event.value});
    *slot = event.value;
  }
}

Eigen::VectorXd emergence_step(const FactorModelSpec& spec, const InformationState& state, const Partition& p,
                               const ClusterNoiseDraw& draws, const Eigen::VectorXd& expected_factor_returns,
                               double noise_scale) {
  const auto N = static_cast<Eigen::Index>(spec.n_assets);
  if (p.size() != spec.n_assets) throw ShapeError("emergence: partition covers " + std::to_string(p.size()) + " assets");
  if (draws.eta.size() != static_cast<Eigen::Index>(p.n_clusters())) {
    throw ShapeError("emergence: need one eta per cluster");
  }
  if (draws.eps.size() != N) throw ShapeError("emergence: need one eps per asset");
  if (expected_factor_returns.size() != static_cast<Eigen::Index>(spec.n_factors)) {
    throw ShapeError("emergence: need one expected return per factor");
  }
  if (state.theta.rows() != N || state.theta.cols() != static_cast<Eigen::Index>(spec.n_bottom_up) ||
      state.z.size() != static_cast<Eigen::Index>(spec.n_top_down) ||
      state.factor_returns.size() != static_cast<Eigen::Index>(spec.n_factors)) {
    throw ShapeError("emergence: information state does not match the spec");
  }
  Eigen::VectorXd out(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto asset = static_cast<std::size_t>(i);
    const Eigen::VectorXd theta_row = state.theta.row(i).transpose();
    double v = conditional_alpha(spec, asset, state.z);
    for (std::size_t q = 0; q < spec.n_factors; ++q) {
      const auto j = static_cast<Eigen::Index>(q);
      v += conditional_beta(spec, asset, q, state.z, theta_row) * (state.factor_returns(j) - expected_factor_returns(j));
    }
    const auto s = static_cast<Eigen::Index>(p.label(asset));
    v += noise_scale * compose_cluster_noise(p.coupling_of(asset), draws.eta(s), draws.eps(i));
    out(i) = v;
  }
  return out;
}

ReturnPanel SimulationOutput::panel() const { return {returns, factors, z, theta}; }

bool SimulationOutput::operator==(const SimulationOutput& o) const {
  auto same = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
  };
  if (!same(returns, o.returns) || !same(prices, o.prices) || !same(factors, o.factors) || !same(z, o.z) ||
      !same(magnetization, o.magnetization) || theta.size() != o.theta.size() || partitions != o.partitions ||
      events.size() != o.events.size()) {
    return false;
  }
  for (std::size_t t = 0; t < theta.size(); ++t) {
    if (!same(theta[t], o.theta[t])) return false;
  }
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& a = events[e];
    const auto& b = o.events[e];
    auto eq = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    if (a.time != b.time || a.path != b.path || !eq(a.before, b.before) || !eq(a.after, b.after)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Spin noise

SpinNoiseSeries spin_noise_series(const ScenarioConfig& cfg, std::size_t asset) {
  const auto& sp = cfg.spin;
  SpinMarketParams params = sp.lattice;
  SpinMarketState lattice(params, RandomStream(cfg.master_seed, "spin_lattice", asset));

  // Return over one market step: c times the summed magnetization of its sweeps.
  auto advance = [&] {
    double sum = 0.0;
    for (std::size_t k = 0; k < sp.sweeps_per_step; ++k) sum += lattice.step();
    return sp.price_scale * sum;
  };

  // Burn-in: plain running moments seed the exponentially weighted ones.
  double mean = 0.0;
  double var = 0.0;
  double last = 0.0;
  for (std::size_t b = 0; b < sp.burn_in; ++b) {
    last = advance();
    const double d = last - mean;
    mean += d / static_cast<double>(b + 1);
    var += d * (last - mean);
  }
  if (sp.burn_in > 1) var /= static_cast<double>(sp.burn_in);
  const double lambda = 1.0 / static_cast<double>(sp.window);

  std::vector<const Intervention*> mine;
  for (const auto& ev : cfg.interventions) {
    if (ev.path.rfind("spin.", 0) != 0) continue;
    const auto path = ParameterPath::parse(ev.path);
    if (!path.index[0] || *path.index[0] == asset) mine.push_back(&ev);
  }
  std::stable_sort(mine.begin(), mine.end(), [](auto* a, auto* b) { return a->time < b->time; });

  SpinNoiseSeries out;
  out.eps.resize(cfg.horizon);
  out.magnetization.resize(cfg.horizon);
  auto next = mine.begin();
  std::size_t seen = sp.burn_in;
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    bool changed = false;
    for (; next != mine.end() && (*next)->time == t; ++next) {
      *spin_slot(params, ParameterPath::parse((*next)->path).name) = (*next)->value;
      changed = true;
    }
    if (changed) lattice.set_params(params);

    // X(t) = c M(t-1): the value realised by the previous step.
    const double x = last;
    out.eps[t] = var > 0.0 ? (x - mean) / std::sqrt(var) : 0.0;
    const double d = x - mean;
    if (seen == 0) {
      mean = x;
    } else {
      mean += lambda * d;
      var = (1.0 - lambda) * (var + lambda * d * d);
    }
    ++seen;

    last = advance();
    out.magnetization[t] = lattice.magnetization();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Engine

namespace {

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SimulationOutput simulate(const ScenarioConfig& cfg, const RunOptions& options, bool with_clusters) {
  cfg.validate();
  const std::size_t T = cfg.horizon;
  const std::size_t N = cfg.n_assets;
  const std::size_t P = cfg.factor.spec.n_factors;
  const std::size_t K = cfg.factor.spec.n_top_down;
  const std::size_t M = cfg.factor.spec.n_bottom_up;
  const auto Ni = static_cast<Eigen::Index>(N);
  const auto Mi = static_cast<Eigen::Index>(M);
  const auto Ki = static_cast<Eigen::Index>(K);
  const std::uint64_t seed = cfg.master_seed;

  SimulationOutput out;
  out.returns.resize(static_cast<Eigen::Index>(T), Ni);
  out.prices.resize(static_cast<Eigen::Index>(T + 1), Ni);
  out.factors.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(P));
  out.z.resize(static_cast<Eigen::Index>(T), Ki);
  out.theta.reserve(T);
  if (with_clusters) out.partitions.reserve(T);
  out.prices.row(0) = cfg.initial_prices.transpose();

  // Idiosyncratic noise per asset, precomputed: streams are independent.
  Eigen::MatrixXd eps(static_cast<Eigen::Index>(T), Ni);
  if (cfg.noise_source == NoiseSource::spin_lattice) {
    out.magnetization.resize(static_cast<Eigen::Index>(T), Ni);
    parallel_for(N, options.threads, [&](std::size_t i) {
      const auto series = spin_noise_series(cfg, i);
      for (std::size_t t = 0; t < T; ++t) {
        eps(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = series.eps[t];
        out.magnetization(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = series.magnetization[t];
      }
    });
  } else {
    parallel_for(N, options.threads, [&](std::size_t i) {
      RandomStream rng(seed, "idio", i);
      for (std::size_t t = 0; t < T; ++t) eps(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = rng.normal();
    });
  }

  RandomStream z_rng(seed, "z", 0);
  RandomStream factor_rng(seed, "factor", 0);
  RandomStream eta_rng(seed, "cluster_eta", 0);
  RandomStream partition_rng(seed, "partition", 0);
  std::vector<RandomStream> theta_rng;
  theta_rng.reserve(N);
  for (std::size_t i = 0; i < N; ++i) theta_rng.emplace_back(seed, "theta", i);

  EngineState state = EngineState::initial(cfg);
  std::vector<const Intervention*> schedule;
  for (const auto& ev : cfg.interventions) schedule.push_back(&ev);
  std::stable_sort(schedule.begin(), schedule.end(), [](auto* a, auto* b) { return a->time < b->time; });
  auto due = schedule.begin();

  // Stationary start for the AR(1) information processes.
  Eigen::VectorXd z(Ki);
  Eigen::MatrixXd theta(Ni, Mi);
  {
    const double zs = 1.0 / std::sqrt(1.0 - state.factor.z_phi * state.factor.z_phi);
    for (Eigen::Index k = 0; k < Ki; ++k) z(k) = state.factor.z_offset(k) + zs * z_rng.normal();
    const double ts = 1.0 / std::sqrt(1.0 - state.factor.theta_phi * state.factor.theta_phi);
    for (Eigen::Index i = 0; i < Ni; ++i) {
      for (Eigen::Index m = 0; m < Mi; ++m) theta(i, m) = state.factor.theta_offset(m) + ts * theta_rng[static_cast<std::size_t>(i)].normal();
    }
  }

  Eigen::VectorXd log_price = cfg.initial_prices.array().log();
  Eigen::VectorXd noise(Ni);
  ClusterNoiseDraw draw;
  for (std::size_t t = 0; t < T; ++t) {
    state.t = t;
    for (; due != schedule.end() && (*due)->time == t; ++due) apply_intervention(state, **due, out.events);
    const auto& f = state.factor;
    const auto row = static_cast<Eigen::Index>(t);

    for (Eigen::Index k = 0; k < Ki; ++k) z(k) = f.z_offset(k) + f.z_phi * (z(k) - f.z_offset(k)) + z_rng.normal();
    for (Eigen::Index i = 0; i < Ni; ++i) {
      auto& rng = theta_rng[static_cast<std::size_t>(i)];
      for (Eigen::Index m = 0; m < Mi; ++m) {
        theta(i, m) = f.theta_offset(m) + f.theta_phi * (theta(i, m) - f.theta_offset(m)) + rng.normal();
      }
    }

    if (with_clusters) state.partition = fission_fusion_step(state.partition, partition_rng, state.rates);

    Eigen::VectorXd r(static_cast<Eigen::Index>(P));
    for (Eigen::Index p = 0; p < r.size(); ++p) r(p) = f.mean(p) + f.vol(p) * factor_rng.normal();

    if (with_clusters) {
      const auto& part = state.partition;
      draw.eta.resize(static_cast<Eigen::Index>(part.n_clusters()));
      for (Eigen::Index s = 0; s < draw.eta.size(); ++s) draw.eta(s) = eta_rng.normal();
      for (Eigen::Index i = 0; i < Ni; ++i) {
        noise(i) = f.noise_scale *
                   compose_cluster_noise(part.coupling_of(static_cast<std::size_t>(i)),
                                         draw.eta(part.label(static_cast<std::size_t>(i))), eps(row, i));
      }
      out.partitions.push_back(part);
    } else {
      for (Eigen::Index i = 0; i < Ni; ++i) noise(i) = f.noise_scale * compose_cluster_noise(0.0, 0.0, eps(row, i));
    }

    const InformationState info{z, theta, r};
    const Eigen::VectorXd ret = unified_return(f.spec, info, noise);
    out.returns.row(row) = ret.transpose();
    out.factors.row(row) = r.transpose();
    out.z.row(row) = z.transpose();
    out.theta.push_back(theta);
    log_price += ret;
    out.prices.row(row + 1) = log_price.array().exp().transpose();
  }
  return out;
}

}  // namespace

SimulationOutput run_scenario(const ScenarioConfig& cfg, const RunOptions& options) {
  return simulate(cfg, options, true);
}

SimulationOutput run_factor_only(const ScenarioConfig& cfg, const RunOptions& options) {
  return simulate(cfg, options, false);
}

}  // namespace hiermarket
