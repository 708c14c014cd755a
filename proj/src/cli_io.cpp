#include "hiermarket/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "hiermarket/errors.hpp"

namespace hiermarket {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw DomainError("format_double: conversion failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text, std::size_t row, std::size_t column) {
  std::string_view s = text;
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(column) + ": '" + std::string(text) +
                         "' is not a number",
                     row, column);
  }
  return v;
}

// ---------------------------------------------------------------------------
// CSV

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t record_line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      if (field_started) {
        throw ParseError("row " + std::to_string(records.size() + 1) + ", column " + std::to_string(record.size() + 1) +
                             ": stray quote",
                         records.size() + 1, record.size() + 1);
      }
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_record();
      ++line;
      record_line = line;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) {
    throw ParseError("unterminated quoted field starting near line " + std::to_string(record_line),
                     records.size() + 1, record.size() + 1);
  }
  if (!field.empty() && field.back() == '\r') field.pop_back();
  if (field_started || !record.empty()) end_record();

  if (records.empty()) throw ParseError("empty CSV: no header row", 1, 1);
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw ParseError("row " + std::to_string(r + 1) + ": " + std::to_string(records[r].size()) + " fields, header has " +
                           std::to_string(table.header.size()),
                       r + 1, std::min(records[r].size(), table.header.size()) + 1);
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0, 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_csv(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.filename().string() + ": " + e.what(), e.row(), e.column());
  }
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// YAML scenario

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

void check_keys(const YAML::Node& map, const std::set<std::string>& allowed, const std::string& where) {
  if (!map.IsMap()) throw ConfigError(where + " must be a mapping", line_of(map));
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      std::string msg = "unknown key '" + key + "'";
      if (!where.empty()) msg += " in " + where;
      throw ConfigError(msg, line_of(kv.first));
    }
  }
}

double as_double(const YAML::Node& n, const std::string& name) {
  if (!n.IsScalar()) throw ConfigError(name + " must be a number", line_of(n));
  const auto text = n.Scalar();
  try {
    const double v = parse_double(text);
    if (!std::isfinite(v)) throw ConfigError(name + " must be finite", line_of(n));
    return v;
  } catch (const ParseError&) {
    throw ConfigError(name + ": '" + text + "' is not a number", line_of(n));
  }
}

std::uint64_t as_u64(const YAML::Node& n, const std::string& name) {
  if (!n.IsScalar()) throw ConfigError(name + " must be a non-negative integer", line_of(n));
  const auto& text = n.Scalar();
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(name + ": '" + text + "' is not a non-negative integer", line_of(n));
  }
  return v;
}

std::size_t as_size(const YAML::Node& n, const std::string& name) { return static_cast<std::size_t>(as_u64(n, name)); }

std::string as_string(const YAML::Node& n, const std::string& name) {
  if (!n.IsScalar()) throw ConfigError(name + " must be a string", line_of(n));
  return n.Scalar();
}

Eigen::VectorXd as_vector(const YAML::Node& n, std::size_t size, const std::string& name) {
  const auto sz = static_cast<Eigen::Index>(size);
  if (n.IsScalar()) return Eigen::VectorXd::Constant(sz, as_double(n, name));
  if (!n.IsSequence() || n.size() != size) {
    throw ConfigError(name + " must be a number or a list of " + std::to_string(size), line_of(n));
  }
  Eigen::VectorXd v(sz);
  for (std::size_t i = 0; i < size; ++i) v(static_cast<Eigen::Index>(i)) = as_double(n[i], name);
  return v;
}

Eigen::MatrixXd as_matrix(const YAML::Node& n, std::size_t rows, std::size_t cols, const std::string& name) {
  const auto r = static_cast<Eigen::Index>(rows);
  const auto c = static_cast<Eigen::Index>(cols);
  if (n.IsScalar()) return Eigen::MatrixXd::Constant(r, c, as_double(n, name));
  const std::string want = name + " must be a number or " + std::to_string(rows) + " rows of " + std::to_string(cols);
  if (!n.IsSequence() || n.size() != rows) throw ConfigError(want, line_of(n));
  Eigen::MatrixXd m(r, c);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = n[i];
    if (!row.IsSequence() || row.size() != cols) throw ConfigError(want, line_of(row));
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = as_double(row[j], name);
  }
  return m;
}

template <class F>
auto anchored(const YAML::Node& n, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what(), line_of(n));
  }
}

void parse_spin(const YAML::Node& n, SpinNoiseParams& sp) {
  check_keys(n, {"side", "nn_coupling", "global_coupling", "inverse_temperature", "field", "order", "spin_init",
                 "strategy_init", "price_scale", "sweeps_per_step", "burn_in", "window"},
             "spin");
  auto& l = sp.lattice;
  if (n["side"]) {
    const auto side = as_size(n["side"], "spin.side");
    if (side > 4096) throw ConfigError("spin.side is too large", line_of(n["side"]));
    l.side = static_cast<int>(side);
  }
  if (n["nn_coupling"]) l.nn_coupling = as_double(n["nn_coupling"], "spin.nn_coupling");
  if (n["global_coupling"]) l.global_coupling = as_double(n["global_coupling"], "spin.global_coupling");
  if (n["inverse_temperature"]) l.inverse_temperature = as_double(n["inverse_temperature"], "spin.inverse_temperature");
  if (n["field"]) anchored(n["field"], [&] { l.field = parse_field_model(as_string(n["field"], "spin.field")); });
  if (n["order"]) anchored(n["order"], [&] { l.order = parse_update_order(as_string(n["order"], "spin.order")); });
  if (n["spin_init"]) {
    anchored(n["spin_init"], [&] { l.spin_init = parse_spin_init(as_string(n["spin_init"], "spin.spin_init")); });
  }
  if (n["strategy_init"]) {
    anchored(n["strategy_init"],
             [&] { l.strategy_init = parse_strategy_init(as_string(n["strategy_init"], "spin.strategy_init")); });
  }
  if (n["price_scale"]) sp.price_scale = as_double(n["price_scale"], "spin.price_scale");
  if (n["sweeps_per_step"]) sp.sweeps_per_step = as_size(n["sweeps_per_step"], "spin.sweeps_per_step");
  if (n["burn_in"]) sp.burn_in = as_size(n["burn_in"], "spin.burn_in");
  if (n["window"]) sp.window = as_size(n["window"], "spin.window");
  anchored(n, [&] { l.validate(); });
  if (sp.sweeps_per_step == 0) throw ConfigError("spin.sweeps_per_step must be at least 1", line_of(n));
  if (sp.window == 0) throw ConfigError("spin.window must be at least 1", line_of(n));
  if (!(sp.price_scale > 0.0)) throw ConfigError("spin.price_scale must be positive", line_of(n));
}

void parse_cluster(const YAML::Node& n, std::size_t n_assets, ClusterParams& cp) {
  check_keys(n, {"labels", "blocks", "g", "split_prob", "merge_prob"}, "cluster");
  if (n["labels"] && n["blocks"]) throw ConfigError("cluster: give either labels or blocks, not both", line_of(n));
  std::vector<int> labels;
  if (n["labels"]) {
    const auto l = n["labels"];
    if (!l.IsSequence() || l.size() != n_assets) {
      throw ConfigError("cluster.labels must list one label per asset", line_of(l));
    }
    for (std::size_t i = 0; i < n_assets; ++i) {
      // 1-based, as in partition.csv.
      const auto v = as_u64(l[i], "cluster.labels");
      if (v == 0 || v > n_assets) {
        throw ConfigError("cluster.labels: label " + std::to_string(v) + " outside 1..n_assets", line_of(l[i]));
      }
      labels.push_back(static_cast<int>(v - 1));
    }
  } else if (n["blocks"]) {
    const auto b = n["blocks"];
    if (!b.IsSequence()) throw ConfigError("cluster.blocks must be a list of sizes", line_of(b));
    std::size_t total = 0;
    for (std::size_t s = 0; s < b.size(); ++s) {
      const auto size = as_size(b[s], "cluster.blocks");
      if (size == 0) throw ConfigError("cluster.blocks: empty block", line_of(b[s]));
      labels.insert(labels.end(), size, static_cast<int>(s));
      total += size;
    }
    if (total != n_assets) {
      throw ConfigError("cluster.blocks sum to " + std::to_string(total) + ", expected n_assets = " +
                            std::to_string(n_assets),
                        line_of(b));
    }
  } else {
    for (std::size_t i = 0; i < n_assets; ++i) labels.push_back(static_cast<int>(i));
  }
  const int max_label = labels.empty() ? -1 : *std::max_element(labels.begin(), labels.end());
  const auto q = static_cast<std::size_t>(max_label + 1);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
  if (n["g"]) g = as_vector(n["g"], q, "cluster.g");
  anchored(n["g"] ? n["g"] : n, [&] {
    cp.initial = Partition(labels, std::span<const double>(g.data(), static_cast<std::size_t>(g.size())));
  });
  if (n["split_prob"]) cp.rates.split_prob = as_double(n["split_prob"], "cluster.split_prob");
  if (n["merge_prob"]) cp.rates.merge_prob = as_double(n["merge_prob"], "cluster.merge_prob");
  if (cp.rates.split_prob < 0.0 || cp.rates.merge_prob < 0.0 || cp.rates.split_prob + cp.rates.merge_prob > 1.0) {
    throw ConfigError("cluster split_prob and merge_prob must be non-negative with sum at most 1", line_of(n));
  }
}

void parse_factor(const YAML::Node& n, std::size_t n_assets, FactorLayerParams& f) {
  check_keys(n, {"P", "K", "M", "mean", "vol", "noise_scale", "z_phi", "theta_phi", "z_offset", "theta_offset", "alpha0",
                 "alpha1", "b0", "b1", "b2"},
             "factor");
  const std::size_t P = n["P"] ? as_size(n["P"], "factor.P") : 1;
  const std::size_t K = n["K"] ? as_size(n["K"], "factor.K") : 0;
  const std::size_t M = n["M"] ? as_size(n["M"], "factor.M") : 0;
  for (const char* key : {"P", "K", "M"}) {
    if (n[key] && as_size(n[key], key) > 1000) throw ConfigError(std::string("factor.") + key + " is too large", line_of(n[key]));
  }
  f.spec = FactorModelSpec::zeros(n_assets, P, K, M);
  f.mean = n["mean"] ? as_vector(n["mean"], P, "factor.mean") : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P));
  f.vol = n["vol"] ? as_vector(n["vol"], P, "factor.vol") : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(P));
  if ((f.vol.array() < 0.0).any()) throw ConfigError("factor.vol must be non-negative", line_of(n["vol"]));
  if (n["noise_scale"]) {
    f.noise_scale = as_double(n["noise_scale"], "factor.noise_scale");
    if (f.noise_scale < 0.0) throw ConfigError("factor.noise_scale must be non-negative", line_of(n["noise_scale"]));
  }
  for (const char* key : {"z_phi", "theta_phi"}) {
    if (!n[key]) continue;
    const double v = as_double(n[key], std::string("factor.") + key);
    if (v < 0.0 || v >= 1.0) throw ConfigError(std::string("factor.") + key + " must lie in [0, 1)", line_of(n[key]));
    (std::string(key) == "z_phi" ? f.z_phi : f.theta_phi) = v;
  }
  f.z_offset = n["z_offset"] ? as_vector(n["z_offset"], K, "factor.z_offset") : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
  f.theta_offset = n["theta_offset"] ? as_vector(n["theta_offset"], M, "factor.theta_offset")
                                     : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M));
  auto& s = f.spec;
  if (n["alpha0"]) s.alpha0 = as_vector(n["alpha0"], n_assets, "factor.alpha0");
  if (n["alpha1"]) s.alpha1 = as_matrix(n["alpha1"], n_assets, K, "factor.alpha1");
  if (n["b0"]) s.b0 = as_matrix(n["b0"], n_assets, P, "factor.b0");
  if (n["b1"]) s.b1 = as_matrix(n["b1"], M, P, "factor.b1");
  if (n["b2"]) {
    const auto b2 = n["b2"];
    if (b2.IsScalar()) {
      for (auto& slice : s.b2) slice.setConstant(as_double(b2, "factor.b2"));
    } else {
      if (!b2.IsSequence() || b2.size() != K) {
        throw ConfigError("factor.b2 must be a number or K = " + std::to_string(K) + " matrices", line_of(b2));
      }
      for (std::size_t k = 0; k < K; ++k) s.b2[k] = as_matrix(b2[k], n_assets, P, "factor.b2");
    }
  }
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("YAML syntax: " + e.msg, e.mark.line >= 0 ? e.mark.line + 1 : 0);
  }
  if (!root || root.IsNull()) throw ConfigError("empty scenario document", 1);
  check_keys(root,
             {"schema_version", "seed", "n_assets", "horizon", "noise_source", "initial_price", "spin", "cluster",
              "factor", "interventions"},
             "");
  if (!root["schema_version"]) throw ConfigError("missing schema_version", 1);
  const auto version = as_u64(root["schema_version"], "schema_version");
  if (version != static_cast<std::uint64_t>(kSchemaVersion)) {
    throw ConfigError("unsupported schema_version " + std::to_string(version) + " (this build reads " +
                          std::to_string(kSchemaVersion) + ")",
                      line_of(root["schema_version"]));
  }
  for (const char* key : {"n_assets", "horizon"}) {
    if (!root[key]) throw ConfigError(std::string("missing ") + key, 1);
  }
  const auto n = as_size(root["n_assets"], "n_assets");
  if (n == 0 || n > 100000) throw ConfigError("n_assets must lie in [1, 100000]", line_of(root["n_assets"]));
  const auto horizon = as_size(root["horizon"], "horizon");

  ScenarioConfig cfg = ScenarioConfig::defaults(n, horizon);
  if (root["seed"]) cfg.master_seed = as_u64(root["seed"], "seed");
  if (root["noise_source"]) {
    anchored(root["noise_source"],
             [&] { cfg.noise_source = parse_noise_source(as_string(root["noise_source"], "noise_source")); });
  }
  if (root["initial_price"]) {
    cfg.initial_prices = as_vector(root["initial_price"], n, "initial_price");
    if ((cfg.initial_prices.array() <= 0.0).any()) {
      throw ConfigError("initial_price must be positive", line_of(root["initial_price"]));
    }
  }
  if (root["spin"]) parse_spin(root["spin"], cfg.spin);
  if (root["cluster"]) parse_cluster(root["cluster"], n, cfg.cluster);
  if (root["factor"]) parse_factor(root["factor"], n, cfg.factor);
  if (root["interventions"]) {
    const auto list = root["interventions"];
    if (!list.IsSequence()) throw ConfigError("interventions must be a list", line_of(list));
    for (const auto& item : list) {
      check_keys(item, {"t", "path", "value"}, "intervention");
      for (const char* key : {"t", "path", "value"}) {
        if (!item[key]) throw ConfigError(std::string("intervention is missing '") + key + "'", line_of(item));
      }
      Intervention ev;
      ev.time = as_size(item["t"], "intervention t");
      ev.path = as_string(item["path"], "intervention path");
      ev.value = as_double(item["value"], "intervention value");
      ev.line = static_cast<std::size_t>(line_of(item));
      cfg.interventions.push_back(std::move(ev));
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    if (e.line() != 0) throw;
    throw ConfigError(e.what(), 1);
  }
  return cfg;
}

ScenarioConfig load_scenario(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

namespace {

std::string flow(const Eigen::VectorXd& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v(i));
  }
  return s + "]";
}

std::string flow(const Eigen::MatrixXd& m) {
  std::string s = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) s += ", ";
    s += flow(Eigen::VectorXd(m.row(r).transpose()));
  }
  return s + "]";
}

std::string yaml_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string emit_scenario(const ScenarioConfig& cfg) {
  std::ostringstream o;
  const auto& sp = cfg.spin;
  const auto& f = cfg.factor;
  o << "schema_version: " << kSchemaVersion << "\n";
  o << "seed: " << cfg.master_seed << "\n";
  o << "n_assets: " << cfg.n_assets << "\n";
  o << "horizon: " << cfg.horizon << "\n";
  o << "noise_source: " << to_string(cfg.noise_source) << "\n";
  o << "initial_price: " << flow(cfg.initial_prices) << "\n";
  o << "spin:\n";
  o << "  side: " << sp.lattice.side << "\n";
  o << "  nn_coupling: " << format_double(sp.lattice.nn_coupling) << "\n";
  o << "  global_coupling: " << format_double(sp.lattice.global_coupling) << "\n";
  o << "  inverse_temperature: " << format_double(sp.lattice.inverse_temperature) << "\n";
  o << "  field: " << to_string(sp.lattice.field) << "\n";
  o << "  order: " << to_string(sp.lattice.order) << "\n";
  o << "  spin_init: " << to_string(sp.lattice.spin_init) << "\n";
  o << "  strategy_init: " << to_string(sp.lattice.strategy_init) << "\n";
  o << "  price_scale: " << format_double(sp.price_scale) << "\n";
  o << "  sweeps_per_step: " << sp.sweeps_per_step << "\n";
  o << "  burn_in: " << sp.burn_in << "\n";
  o << "  window: " << sp.window << "\n";
  o << "cluster:\n";
  o << "  labels: [";
  const auto labels = cfg.cluster.initial.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) o << (i ? ", " : "") << labels[i] + 1;
  o << "]\n";
  const auto g = cfg.cluster.initial.couplings();
  o << "  g: " << flow(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()))))
    << "\n";
  o << "  split_prob: " << format_double(cfg.cluster.rates.split_prob) << "\n";
  o << "  merge_prob: " << format_double(cfg.cluster.rates.merge_prob) << "\n";
  o << "factor:\n";
  o << "  P: " << f.spec.n_factors << "\n";
  o << "  K: " << f.spec.n_top_down << "\n";
  o << "  M: " << f.spec.n_bottom_up << "\n";
  o << "  mean: " << flow(f.mean) << "\n";
  o << "  vol: " << flow(f.vol) << "\n";
  o << "  noise_scale: " << format_double(f.noise_scale) << "\n";
  o << "  z_phi: " << format_double(f.z_phi) << "\n";
  o << "  theta_phi: " << format_double(f.theta_phi) << "\n";
  o << "  z_offset: " << flow(f.z_offset) << "\n";
  o << "  theta_offset: " << flow(f.theta_offset) << "\n";
  o << "  alpha0: " << flow(f.spec.alpha0) << "\n";
  o << "  alpha1: " << flow(f.spec.alpha1) << "\n";
  o << "  b0: " << flow(f.spec.b0) << "\n";
  o << "  b1: " << flow(f.spec.b1) << "\n";
  o << "  b2: [";
  for (std::size_t k = 0; k < f.spec.b2.size(); ++k) o << (k ? ", " : "") << flow(f.spec.b2[k]);
  o << "]\n";
  if (cfg.interventions.empty()) {
    o << "interventions: []\n";
  } else {
    o << "interventions:\n";
    for (const auto& ev : cfg.interventions) {
      o << "  - {t: " << ev.time << ", path: " << yaml_quote(ev.path) << ", value: " << format_double(ev.value) << "}\n";
    }
  }
  return o.str();
}

EnvironmentOverrides read_environment() {
  EnvironmentOverrides env;
  if (const char* s = std::getenv("HIERMARKET_SEED"); s && *s) {
    std::string_view text(s);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw ConfigError("HIERMARKET_SEED='" + std::string(text) + "' is not a non-negative integer");
    }
    env.seed = v;
  }
  if (const char* s = std::getenv("HIERMARKET_OUT"); s && *s) env.out = s;
  return env;
}

// ---------------------------------------------------------------------------
// Simulation output

namespace {

class CsvWriter {
 public:
  void field(std::string_view s) {
    if (!first_) buf_ += ',';
    buf_ += csv_escape(s);
    first_ = false;
  }
  void field(double v) { field(format_double(v)); }
  void field(std::size_t v) { field(std::to_string(v)); }
  void end_row() {
    buf_ += '\n';
    first_ = true;
  }
  void row(const Eigen::Ref<const Eigen::RowVectorXd>& v, std::size_t t) {
    field(t);
    for (Eigen::Index j = 0; j < v.size(); ++j) field(v(j));
    end_row();
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
  bool first_ = true;
};

void write_matrix(const fs::path& path, const std::string& prefix, const Eigen::MatrixXd& m, std::size_t t0 = 0) {
  CsvWriter w;
  w.field("t");
  for (Eigen::Index j = 0; j < m.cols(); ++j) w.field(prefix + std::to_string(j));
  w.end_row();
  for (Eigen::Index r = 0; r < m.rows(); ++r) w.row(m.row(r), static_cast<std::size_t>(r) + t0);
  write_text_file(path, w.str());
}

}  // namespace

void write_simulation(const fs::path& dir, const ScenarioConfig& cfg, const SimulationOutput& out) {
  fs::create_directories(dir);
  write_matrix(dir / "returns.csv", "ret:", out.returns);
  write_matrix(dir / "prices.csv", "price:", out.prices);
  write_matrix(dir / "factors.csv", "fac:", out.factors);
  write_matrix(dir / "info_z.csv", "z:", out.z);
  {
    const std::size_t N = cfg.n_assets;
    const std::size_t M = cfg.factor.spec.n_bottom_up;
    CsvWriter w;
    w.field("t");
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t m = 0; m < M; ++m) w.field("theta:" + std::to_string(i) + ":" + std::to_string(m));
    }
    w.end_row();
    for (std::size_t t = 0; t < out.theta.size(); ++t) {
      w.field(t);
      for (Eigen::Index i = 0; i < out.theta[t].rows(); ++i) {
        for (Eigen::Index m = 0; m < out.theta[t].cols(); ++m) w.field(out.theta[t](i, m));
      }
      w.end_row();
    }
    write_text_file(dir / "info_theta.csv", w.str());
  }
  {
    CsvWriter w;
    for (const char* h : {"t", "asset_id", "cluster_label", "g"}) w.field(h);
    w.end_row();
    for (std::size_t t = 0; t < out.partitions.size(); ++t) {
      const auto& p = out.partitions[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        w.field(t);
        w.field(i);
        w.field(static_cast<std::size_t>(p.label(i)) + 1);
        w.field(p.coupling_of(i));
        w.end_row();
      }
    }
    write_text_file(dir / "partition.csv", w.str());
  }
  {
    CsvWriter w;
    for (const char* h : {"t", "path", "before", "after"}) w.field(h);
    w.end_row();
    for (const auto& ev : out.events) {
      w.field(ev.time);
      w.field(ev.path);
      w.field(ev.before);
      w.field(ev.after);
      w.end_row();
    }
    write_text_file(dir / "events.csv", w.str());
  }
  if (cfg.noise_source == NoiseSource::spin_lattice) write_matrix(dir / "magnetization.csv", "mag:", out.magnetization);
  write_text_file(dir / "config.resolved.yaml", emit_scenario(cfg));
}

namespace {

// Column holding the date of each row; never read as data.
bool is_date_header(const std::string& h) { return h == "t" || h == "date" || h == "time"; }

struct Column {
  enum Role { ret, fac, z, theta } role;
  std::string id;
  std::size_t m = 0;
  std::size_t index = 0;  // position in the CSV row
};

std::vector<Column> classify(const CsvTable& table, bool& tagged) {
  std::vector<Column> cols;
  tagged = false;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    const auto& h = table.header[j];
    auto starts = [&](const char* p) { return h.rfind(p, 0) == 0; };
    if (starts("ret:") || starts("fac:") || starts("z:") || starts("theta:")) tagged = true;
  }
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    const auto& h = table.header[j];
    if (is_date_header(h)) continue;
    auto starts = [&](const char* p) { return h.rfind(p, 0) == 0; };
    if (!tagged) {
      cols.push_back({Column::ret, h, 0, j});
    } else if (starts("ret:")) {
      cols.push_back({Column::ret, h.substr(4), 0, j});
    } else if (starts("fac:")) {
      cols.push_back({Column::fac, h.substr(4), 0, j});
    } else if (starts("z:")) {
      cols.push_back({Column::z, h.substr(2), 0, j});
    } else if (starts("theta:")) {
      const auto rest = h.substr(6);
      const auto colon = rest.rfind(':');
      std::size_t m = 0;
      const char* b = rest.data() + (colon == std::string::npos ? 0 : colon + 1);
      const auto [ptr, ec] = std::from_chars(b, rest.data() + rest.size(), m);
      if (colon == std::string::npos || ec != std::errc() || ptr != rest.data() + rest.size()) {
        throw ParseError("column " + std::to_string(j + 1) + ": theta header '" + h + "' must be theta:<asset>:<m>", 1,
                         j + 1);
      }
      cols.push_back({Column::theta, rest.substr(0, colon), m, j});
    } else {
      throw ParseError("column " + std::to_string(j + 1) + ": header '" + h + "' has no recognised role prefix", 1, j + 1);
    }
  }
  return cols;
}

LoadedPanel panel_from_table(const CsvTable& table, const std::string& source) {
  bool tagged = false;
  const auto cols = classify(table, tagged);
  LoadedPanel out;
  std::vector<std::size_t> ret_cols, fac_cols, z_cols;
  std::map<std::string, std::size_t> asset_pos;
  for (const auto& c : cols) {
    if (c.role == Column::ret) {
      if (asset_pos.count(c.id)) throw ParseError(source + ": duplicate asset '" + c.id + "'", 1, c.index + 1);
      asset_pos[c.id] = out.asset_ids.size();
      out.asset_ids.push_back(c.id);
      ret_cols.push_back(c.index);
    } else if (c.role == Column::fac) {
      fac_cols.push_back(c.index);
    } else if (c.role == Column::z) {
      z_cols.push_back(c.index);
    }
  }
  if (ret_cols.empty()) throw ParseError(source + ": no return columns", 1, 1);
  const std::size_t N = ret_cols.size();
  std::size_t M = 0;
  for (const auto& c : cols) {
    if (c.role == Column::theta) M = std::max(M, c.m + 1);
  }
  std::vector<std::size_t> theta_col(N * M, SIZE_MAX);
  for (const auto& c : cols) {
    if (c.role != Column::theta) continue;
    const auto it = asset_pos.find(c.id);
    if (it == asset_pos.end()) {
      throw ParseError(source + ": theta column for unknown asset '" + c.id + "'", 1, c.index + 1);
    }
    auto& slot = theta_col[it->second * M + c.m];
    if (slot != SIZE_MAX) throw ParseError(source + ": duplicate theta column", 1, c.index + 1);
    slot = c.index;
  }
  for (std::size_t k = 0; k < theta_col.size(); ++k) {
    if (theta_col[k] == SIZE_MAX) {
      throw ParseError(source + ": missing theta column theta:" + out.asset_ids[k / M] + ":" + std::to_string(k % M), 1,
                       table.header.size());
    }
  }

  const std::size_t T = table.rows.size();
  const auto Ti = static_cast<Eigen::Index>(T);
  auto& p = out.panel;
  p.returns.resize(Ti, static_cast<Eigen::Index>(N));
  p.factors.resize(Ti, static_cast<Eigen::Index>(fac_cols.size()));
  p.z.resize(Ti, static_cast<Eigen::Index>(z_cols.size()));
  const auto t_col = std::find_if(table.header.begin(), table.header.end(), is_date_header);
  const bool has_t = t_col != table.header.end();
  const std::size_t t_index = static_cast<std::size_t>(t_col - table.header.begin());
  for (std::size_t r = 0; r < T; ++r) {
    const auto& row = table.rows[r];
    const auto ri = static_cast<Eigen::Index>(r);
    auto num = [&](std::size_t j) { return parse_double(row[j], r + 2, j + 1); };
    out.dates.push_back(has_t ? row[t_index] : std::to_string(r));
    for (std::size_t i = 0; i < N; ++i) p.returns(ri, static_cast<Eigen::Index>(i)) = num(ret_cols[i]);
    for (std::size_t j = 0; j < fac_cols.size(); ++j) p.factors(ri, static_cast<Eigen::Index>(j)) = num(fac_cols[j]);
    for (std::size_t j = 0; j < z_cols.size(); ++j) p.z(ri, static_cast<Eigen::Index>(j)) = num(z_cols[j]);
    if (M > 0) {
      Eigen::MatrixXd th(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(M));
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t m = 0; m < M; ++m) th(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = num(theta_col[i * M + m]);
      }
      p.theta.push_back(std::move(th));
    }
  }
  return out;
}

// Appends the columns of `extra` to `base`, checking that the t columns agree.
void append_columns(CsvTable& base, const CsvTable& extra, const std::string& name) {
  if (extra.rows.size() != base.rows.size()) {
    throw ParseError(name + ": " + std::to_string(extra.rows.size()) + " rows, returns.csv has " +
                         std::to_string(base.rows.size()),
                     extra.rows.size() + 1, 1);
  }
  const auto bt = std::find(base.header.begin(), base.header.end(), "t");
  const auto et = std::find(extra.header.begin(), extra.header.end(), "t");
  const bool both = bt != base.header.end() && et != extra.header.end();
  const auto bi = static_cast<std::size_t>(bt - base.header.begin());
  const auto ei = static_cast<std::size_t>(et - extra.header.begin());
  for (std::size_t r = 0; r < extra.rows.size(); ++r) {
    if (both && base.rows[r][bi] != extra.rows[r][ei]) {
      throw ParseError(name + ": row " + std::to_string(r + 2) + " date '" + extra.rows[r][ei] + "' does not match returns.csv",
                       r + 2, ei + 1);
    }
  }
  for (std::size_t j = 0; j < extra.header.size(); ++j) {
    if (both && j == ei) continue;
    base.header.push_back(extra.header[j]);
    for (std::size_t r = 0; r < extra.rows.size(); ++r) base.rows[r].push_back(extra.rows[r][j]);
  }
}

}  // namespace

LoadedPanel load_panel(const fs::path& path) {
  if (fs::is_directory(path)) {
    CsvTable table = read_csv(path / "returns.csv");
    for (const char* name : {"factors.csv", "info_z.csv", "info_theta.csv"}) {
      if (fs::exists(path / name)) append_columns(table, read_csv(path / name), name);
    }
    return panel_from_table(table, (path / "returns.csv").string());
  }
  const auto table = read_csv(path);
  try {
    return panel_from_table(table, path.filename().string());
  } catch (const ParseError& e) {
    throw;
  }
}

std::vector<int> load_partition_labels(const fs::path& path, const std::vector<std::string>& asset_ids) {
  const auto table = read_csv(path);
  auto col = [&](const char* name) -> std::size_t {
    const auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) throw ParseError(path.filename().string() + ": missing column '" + name + "'", 1, 1);
    return static_cast<std::size_t>(it - table.header.begin());
  };
  const std::size_t a_col = col("asset_id");
  const std::size_t l_col = col("cluster_label");
  const bool dated = std::find(table.header.begin(), table.header.end(), "t") != table.header.end();
  std::string last_t;
  if (dated) {
    const std::size_t t_col = col("t");
    double best = -1.0;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const double t = parse_double(table.rows[r][t_col], r + 2, t_col + 1);
      if (t > best) {
        best = t;
        last_t = table.rows[r][t_col];
      }
    }
  }
  std::map<std::string, int> by_id;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (dated && row[col("t")] != last_t) continue;
    by_id[row[a_col]] = static_cast<int>(parse_double(row[l_col], r + 2, l_col + 1));
  }
  std::vector<int> labels;
  for (const auto& id : asset_ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ParseError(path.filename().string() + ": no label for asset '" + id + "'", 0, a_col + 1);
    labels.push_back(it->second);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Spec text

namespace {

void put(std::ostringstream& o, const std::string& name, const std::string& shape, const double* data, std::size_t n) {
  o << name << " [" << shape << "] =";
  for (std::size_t i = 0; i < n; ++i) o << ' ' << format_double(data[i]);
  o << '\n';
}

void put(std::ostringstream& o, const std::string& name, const Eigen::MatrixXd& m) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  put(o, name, std::to_string(m.rows()) + "x" + std::to_string(m.cols()), rm.data(), static_cast<std::size_t>(rm.size()));
}

}  // namespace

std::string format_spec(const FactorModelSpec& spec) {
  std::ostringstream o;
  o << "n_assets = " << spec.n_assets << "\n";
  o << "n_factors = " << spec.n_factors << "\n";
  o << "n_top_down = " << spec.n_top_down << "\n";
  o << "n_bottom_up = " << spec.n_bottom_up << "\n";
  put(o, "alpha0", std::to_string(spec.alpha0.size()), spec.alpha0.data(), static_cast<std::size_t>(spec.alpha0.size()));
  put(o, "alpha1", spec.alpha1);
  put(o, "b0", spec.b0);
  put(o, "b1", spec.b1);
  std::vector<double> b2;
  for (const auto& slice : spec.b2) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = slice;
    b2.insert(b2.end(), rm.data(), rm.data() + rm.size());
  }
  put(o, "b2", std::to_string(spec.n_top_down) + "x" + std::to_string(spec.n_assets) + "x" + std::to_string(spec.n_factors),
      b2.data(), b2.size());
  return o.str();
}

FactorModelSpec parse_spec(std::string_view text) {
  std::map<std::string, std::size_t> dims;
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>> arrays;
  std::map<std::string, std::size_t> where;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("spec line " + std::to_string(line_no) + ": expected '='", line_no, 1);
    std::istringstream lhs(line.substr(0, eq));
    std::string name, shape;
    lhs >> name >> shape;
    std::istringstream rhs(line.substr(eq + 1));
    if (shape.empty()) {
      std::string value, extra;
      rhs >> value >> extra;
      const double v = parse_double(value, line_no, eq + 2);
      if (!extra.empty() || v < 0 || v != std::floor(v)) {
        throw ParseError("spec line " + std::to_string(line_no) + ": '" + name + "' needs one non-negative integer", line_no,
                         eq + 2);
      }
      dims[name] = static_cast<std::size_t>(v);
      continue;
    }
    if (shape.front() != '[' || shape.back() != ']') {
      throw ParseError("spec line " + std::to_string(line_no) + ": shape must look like [3x2]", line_no, 1);
    }
    std::vector<std::size_t> extent;
    std::size_t count = 1;
    std::string_view body(shape.data() + 1, shape.size() - 2);
    while (true) {
      const auto x = body.find('x');
      const auto tok = body.substr(0, x);
      std::size_t d = 0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParseError("spec line " + std::to_string(line_no) + ": bad shape " + shape, line_no, 1);
      }
      extent.push_back(d);
      count *= d;
      if (x == std::string_view::npos) break;
      body.remove_prefix(x + 1);
    }
    std::vector<double> values;
    std::string tok;
    while (rhs >> tok) values.push_back(parse_double(tok, line_no, eq + 2));
    if (values.size() != count) {
      throw ParseError("spec line " + std::to_string(line_no) + ": " + name + " has " + std::to_string(values.size()) +
                           " values, shape needs " + std::to_string(count),
                       line_no, eq + 2);
    }
    arrays[name] = {extent, values};
    where[name] = line_no;
  }
  for (const char* key : {"n_assets", "n_factors", "n_top_down", "n_bottom_up"}) {
    if (!dims.count(key)) throw ParseError(std::string("spec: missing ") + key, line_no, 1);
  }
  const std::size_t N = dims["n_assets"], P = dims["n_factors"], K = dims["n_top_down"], M = dims["n_bottom_up"];
  auto spec = FactorModelSpec::zeros(N, P, K, M);
  auto take = [&](const std::string& name, std::vector<std::size_t> expected) -> const std::vector<double>& {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw ParseError("spec: missing " + name, line_no, 1);
    if (it->second.first != expected) {
      throw ParseError("spec line " + std::to_string(where[name]) + ": " + name + " shape does not match the dimensions",
                       where[name], 1);
    }
    return it->second.second;
  };
  auto fill = [](Eigen::MatrixXd& m, const double* data) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[r * m.cols() + c];
    }
  };
  const auto& a0 = take("alpha0", {N});
  for (std::size_t i = 0; i < N; ++i) spec.alpha0(static_cast<Eigen::Index>(i)) = a0[i];
  fill(spec.alpha1, take("alpha1", {N, K}).data());
  fill(spec.b0, take("b0", {N, P}).data());
  fill(spec.b1, take("b1", {M, P}).data());
  const auto& b2 = take("b2", {K, N, P});
  for (std::size_t k = 0; k < K; ++k) fill(spec.b2[k], b2.data() + k * N * P);
  for (const auto& [name, _] : arrays) {
    static const std::set<std::string> known{"alpha0", "alpha1", "b0", "b1", "b2"};
    if (!known.count(name)) throw ParseError("spec line " + std::to_string(where[name]) + ": unknown entry " + name, where[name], 1);
  }
  return spec;
}

}  // namespace hiermarket
