// Command-line front end: simulate | fit-clusters | estimate-factors | diagnose.
//
// Exit codes: 0 ok, 1 runtime failure, 2 invalid input, 3 identifiability.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "hiermarket/cli_io.hpp"
#include "hiermarket/cluster_dynamics.hpp"
#include "hiermarket/diagnostics.hpp"
#include "hiermarket/errors.hpp"
#include "hiermarket/factor_pricing.hpp"
#include "hiermarket/hierarchy_engine.hpp"

namespace fs = std::filesystem;
using namespace hiermarket;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
  std::size_t threads = 1;

  // Environment beats flags.
  void resolve() {
    const auto env = read_environment();
    if (env.seed) seed = env.seed;
    if (env.out) out = *env.out;
    if (out.empty()) throw ConfigError("no output directory: pass --out or set HIERMARKET_OUT");
    if (threads == 0) threads = 1;
  }
  void note(const std::string& msg) const {
    if (!quiet) std::cerr << msg << "\n";
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Master seed (HIERMARKET_SEED overrides)");
  cmd->add_option("--out", c.out, "Output directory (HIERMARKET_OUT overrides)");
  cmd->add_flag("--quiet", c.quiet, "Suppress progress messages");
  cmd->add_option("--threads", c.threads, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);
}

std::string fmt(double v) { return std::isfinite(v) ? format_double(v) : (std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf")); }

// ---------------------------------------------------------------------------

int simulate(const std::string& config_path, Common& c) {
  ScenarioConfig cfg = load_scenario(config_path);
  c.resolve();
  if (c.seed) cfg.master_seed = *c.seed;
  const auto out = run_scenario(cfg, {c.threads});
  write_simulation(c.out, cfg, out);
  c.note("simulated " + std::to_string(cfg.horizon) + " steps for " + std::to_string(cfg.n_assets) + " assets -> " + c.out);
  return 0;
}

int fit_clusters(const std::string& panel_path, Common& c, double penalty, std::size_t restarts) {
  const auto loaded = load_panel(panel_path);
  c.resolve();
  ClusterFitOptions opt;
  opt.penalty_per_cluster = penalty;
  opt.restarts = restarts;
  opt.seed = c.seed.value_or(1);
  opt.threads = c.threads;
  const auto fit = fit_clusters_ml(loaded.panel.returns, opt);
  fs::create_directories(c.out);

  std::string csv = "asset_id,cluster_label,g\n";
  const auto& p = fit.partition;
  for (std::size_t i = 0; i < p.size(); ++i) {
    csv += csv_escape(loaded.asset_ids[i]) + "," + std::to_string(p.label(i) + 1) + "," + fmt(p.coupling_of(i)) + "\n";
  }
  write_text_file(fs::path(c.out) / "partition.csv", csv);

  std::ostringstream s;
  s << "assets = " << p.size() << "\n";
  s << "observations = " << fit.observations << "\n";
  s << "clusters = " << p.n_clusters() << "\n";
  s << "log_likelihood_gain = " << fmt(fit.log_likelihood_gain) << "\n";
  s << "penalty_per_cluster = " << fmt(fit.penalty_per_cluster) << "\n";
  s << "objective = " << fmt(fit.objective) << "\n";
  s << "search = " << (fit.exhaustive ? "exhaustive" : "annealing") << "\n";
  const auto members = p.members();
  for (std::size_t k = 0; k < members.size(); ++k) {
    s << "cluster " << k + 1 << " size = " << members[k].size() << " g = " << fmt(p.couplings()[k]) << "\n";
  }
  write_text_file(fs::path(c.out) / "fit_summary.txt", s.str());
  c.note("found " + std::to_string(p.n_clusters()) + " clusters; log-likelihood gain " + fmt(fit.log_likelihood_gain));
  return 0;
}

int estimate_factors(const std::string& panel_path, Common& c, const std::string& mode_name,
                     std::optional<std::size_t> P, std::optional<std::size_t> K, std::optional<std::size_t> M,
                     const std::string& config_path) {
  CalibrationMode mode;
  if (mode_name == "pooled") {
    mode = CalibrationMode::pooled;
  } else if (mode_name == "two-stage") {
    mode = CalibrationMode::two_stage;
  } else {
    throw ConfigError("--mode must be pooled or two-stage");
  }
  if (!config_path.empty()) {
    const auto cfg = load_scenario(config_path);
    if (!P) P = cfg.factor.spec.n_factors;
    if (!K) K = cfg.factor.spec.n_top_down;
    if (!M) M = cfg.factor.spec.n_bottom_up;
  }
  const auto loaded = load_panel(panel_path);
  c.resolve();
  const auto& panel = loaded.panel;
  auto check = [](const char* name, std::optional<std::size_t> declared, std::size_t found, const char* cols) {
    if (declared && *declared != found) {
      throw ShapeError(std::string("declared ") + name + " = " + std::to_string(*declared) + " but the panel has " +
                       std::to_string(found) + " " + cols + " columns");
    }
  };
  check("P", P, panel.factor_count(), "factor (fac:)");
  check("K", K, panel.top_down_count(), "top-down (z:)");
  check("M", M, panel.bottom_up_count(), "bottom-up attribute (theta:) per asset");

  const auto cal = calibrate_unified(panel, mode);
  const fs::path out(c.out);
  fs::create_directories(out);
  write_text_file(out / "estimate.spec", format_spec(cal.estimate));
  write_text_file(out / "std_error.spec", format_spec(cal.std_error));

  std::string csv = "coefficient,estimate,std_error\n";
  const auto& e = cal.estimate;
  const auto& s = cal.std_error;
  const std::size_t n_k = e.n_top_down;
  const std::size_t n_p = e.n_factors;
  for (std::size_t i = 0; i < e.n_assets; ++i) {
    const auto names = own_regressor_names(i, n_k, n_p);
    const auto ii = static_cast<Eigen::Index>(i);
    std::size_t j = 0;
    auto row = [&](double est, double se) { csv += csv_escape(names[j++]) + "," + fmt(est) + "," + fmt(se) + "\n"; };
    row(e.alpha0(ii), s.alpha0(ii));
    for (Eigen::Index k = 0; k < e.alpha1.cols(); ++k) row(e.alpha1(ii, k), s.alpha1(ii, k));
    for (Eigen::Index p = 0; p < e.b0.cols(); ++p) row(e.b0(ii, p), s.b0(ii, p));
    for (std::size_t k = 0; k < n_k; ++k) {
      for (Eigen::Index p = 0; p < e.b0.cols(); ++p) row(e.b2[k](ii, p), s.b2[k](ii, p));
    }
  }
  const auto shared = shared_regressor_names(e.n_bottom_up, n_p);
  for (std::size_t m = 0, j = 0; m < e.n_bottom_up; ++m) {
    for (std::size_t p = 0; p < n_p; ++p, ++j) {
      const auto mi = static_cast<Eigen::Index>(m);
      const auto pi = static_cast<Eigen::Index>(p);
      csv += csv_escape(shared[j]) + "," + fmt(e.b1(mi, pi)) + "," + fmt(s.b1(mi, pi)) + "\n";
    }
  }
  write_text_file(out / "coefficients.csv", csv);

  std::ostringstream sum;
  sum << "mode = " << mode_name << "\n";
  sum << "observations = " << cal.observations << "\n";
  sum << "parameters = " << cal.parameters << "\n";
  sum << "r_squared = " << fmt(cal.r_squared) << "\n";
  sum << "residual_variance = " << fmt(cal.residual_variance) << "\n";
  if (mode == CalibrationMode::two_stage) {
    sum << "ridge_periods = " << cal.ridge_periods.size() << "\n";
    std::string d = "t,alpha";
    for (Eigen::Index m = 0; m < cal.period_delta.cols(); ++m) d += ",delta:" + std::to_string(m);
    d += ",ridge\n";
    std::size_t next_ridge = 0;
    for (Eigen::Index t = 0; t < cal.period_alpha.size(); ++t) {
      d += csv_escape(loaded.dates[static_cast<std::size_t>(t)]) + "," + fmt(cal.period_alpha(t));
      for (Eigen::Index m = 0; m < cal.period_delta.cols(); ++m) d += "," + fmt(cal.period_delta(t, m));
      const bool ridge = next_ridge < cal.ridge_periods.size() && cal.ridge_periods[next_ridge] == static_cast<std::size_t>(t);
      if (ridge) ++next_ridge;
      d += ridge ? ",1\n" : ",0\n";
    }
    write_text_file(out / "period_delta.csv", d);
  }
  write_text_file(out / "summary.txt", sum.str());
  c.note("calibrated " + std::to_string(cal.parameters) + " coefficients, R^2 = " + fmt(cal.r_squared));
  return 0;
}

int diagnose(const std::string& panel_path, Common& c, const std::string& partition_path, double hill_k,
             double jump_sd) {
  const auto loaded = load_panel(panel_path);
  c.resolve();
  const auto& R = loaded.panel.returns;
  StylizedFactsOptions opt;
  opt.hill_k_fraction = hill_k;
  opt.jump_threshold_sd = jump_sd;

  std::string csv = "series,n,mean,sd,excess_kurtosis,hill_upper,hill_lower";
  for (double k : opt.hill_sensitivity) csv += ",hill_abs@" + fmt(k);
  csv += ",jumps,band";
  for (auto l : opt.lags) csv += ",acf:" + std::to_string(l);
  for (auto l : opt.lags) csv += ",acf_abs:" + std::to_string(l);
  csv += ",volatility_clustering,fat_tails,warning\n";
  std::ostringstream text;

  auto report = [&](const std::string& name, const std::vector<double>& x) {
    try {
      const auto r = stylized_facts(x, opt);
      auto opt_str = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); };
      csv += csv_escape(name) + "," + std::to_string(r.n) + "," + fmt(r.mean) + "," + fmt(r.sd) + "," +
             fmt(r.excess_kurtosis) + "," + opt_str(r.hill_upper) + "," + opt_str(r.hill_lower);
      for (const auto& [k, v] : r.hill_by_k) csv += "," + opt_str(v);
      csv += "," + std::to_string(r.jump_count) + "," + fmt(r.band);
      for (double v : r.acf_returns) csv += "," + fmt(v);
      for (double v : r.acf_abs_returns) csv += "," + fmt(v);
      csv += std::string(",") + (r.volatility_clustering() ? "1" : "0") + "," + (r.fat_tails() ? "1" : "0") + ",\n";
      text << name << ": n=" << r.n << " kurtosis=" << fmt(r.excess_kurtosis) << " jumps=" << r.jump_count
           << " volatility clustering " << (r.volatility_clustering() ? "yes" : "no") << ", fat tails "
           << (r.fat_tails() ? "yes" : "no") << "\n";
    } catch (const DataError& e) {
      std::cerr << "warning: " << name << ": " << e.what() << "\n";
      // Blank statistics between the count and the warning column.
      const auto fields = static_cast<std::size_t>(std::count(csv.begin(), csv.begin() + static_cast<std::ptrdiff_t>(csv.find('\n')), ',')) + 1;
      csv += csv_escape(name) + "," + std::to_string(x.size()) + std::string(fields - 2, ',') + csv_escape(e.what()) + "\n";
      text << name << ": skipped (" << e.what() << ")\n";
    }
  };

  std::vector<double> pooled(static_cast<std::size_t>(R.rows()), 0.0);
  for (Eigen::Index i = 0; i < R.cols(); ++i) {
    std::vector<double> x(static_cast<std::size_t>(R.rows()));
    for (Eigen::Index t = 0; t < R.rows(); ++t) {
      x[static_cast<std::size_t>(t)] = R(t, i);
      pooled[static_cast<std::size_t>(t)] += R(t, i) / static_cast<double>(R.cols());
    }
    report(loaded.asset_ids[static_cast<std::size_t>(i)], x);
  }
  report("pooled", pooled);

  if (!partition_path.empty()) {
    const auto labels = load_partition_labels(partition_path, loaded.asset_ids);
    const auto cc = cluster_correlations(R, labels);
    text << "within-cluster mean correlation = " << fmt(cc.within) << " (" << cc.within_pairs << " pairs)\n";
    text << "cross-cluster mean correlation = " << fmt(cc.cross) << " (" << cc.cross_pairs << " pairs)\n";
  }
  const fs::path out(c.out);
  fs::create_directories(out);
  write_text_file(out / "diagnostics.csv", csv);
  write_text_file(out / "summary.txt", text.str());
  c.note(text.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hiermarket: multilevel market simulator and calibration toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* sim = app.add_subcommand("simulate", "Run a scenario and write the CSV suite");
  std::string config_path;
  std::string config_positional;
  sim->add_option("scenario", config_positional, "Scenario YAML (same as --config)");
  sim->add_option("--config", config_path, "Scenario YAML");
  add_common(sim, common);

  auto* fit = app.add_subcommand("fit-clusters", "Maximum-likelihood cluster structure of a return panel");
  std::string panel_path;
  double penalty = -1.0;
  std::size_t restarts = 4;
  fit->add_option("panel", panel_path, "Panel CSV or simulation directory")->required();
  fit->add_option("--penalty", penalty, "Log-likelihood charge per non-singleton cluster (negative: 0.5 ln T)");
  fit->add_option("--restarts", restarts, "Annealing restarts for more than 8 assets");
  add_common(fit, common);

  auto* est = app.add_subcommand("estimate-factors", "Least-squares calibration of the conditional factor model");
  std::string mode = "pooled";
  std::optional<std::size_t> P, K, M;
  std::string est_config;
  est->add_option("panel", panel_path, "Panel CSV or simulation directory")->required();
  est->add_option("--mode", mode, "pooled or two-stage");
  est->add_option("--P", P, "Declared number of factors");
  est->add_option("--K", K, "Declared number of top-down variables");
  est->add_option("--M", M, "Declared number of bottom-up attributes");
  est->add_option("--config", est_config, "Scenario YAML whose factor dimensions are declared");
  add_common(est, common);

  auto* diag = app.add_subcommand("diagnose", "Stylized-fact report per asset and for the equal-weighted pool");
  std::string partition_path;
  double hill_k = 0.05;
  double jump_sd = 4.0;
  diag->add_option("panel", panel_path, "Panel CSV or simulation directory")->required();
  diag->add_option("--partition", partition_path, "Partition CSV for within/cross-cluster correlations");
  diag->add_option("--hill-k", hill_k, "Hill tail fraction")->check(CLI::Range(0.0, 1.0));
  diag->add_option("--jump-sd", jump_sd, "Jump threshold in standard deviations")->check(CLI::PositiveNumber);
  add_common(diag, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) {
      const std::string path = !config_path.empty() ? config_path : config_positional;
      if (path.empty()) throw ConfigError("simulate needs a scenario file (--config)");
      return simulate(path, common);
    }
    if (fit->parsed()) return fit_clusters(panel_path, common, penalty, restarts);
    if (est->parsed()) return estimate_factors(panel_path, common, mode, P, K, M, est_config);
    if (diag->parsed()) return diagnose(panel_path, common, partition_path, hill_k, jump_sd);
  } catch (const IdentifiabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    // Shape, domain, index and data errors all stem from the inputs.
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
