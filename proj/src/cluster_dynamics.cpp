#include "hiermarket/cluster_dynamics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <sstream>

#include "hiermarket/errors.hpp"

namespace hiermarket {

namespace {

void check_coupling(double g) {
  if (!(g >= 0.0 && g <= 1.0)) {
    throw DomainError("cluster coupling g must lie in [0, 1], got " + std::to_string(g));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Partition

Partition::Partition(std::span<const int> labels, std::span<const double> couplings) {
  std::map<int, int> remap;
  labels_.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int raw = labels[i];
    if (raw < 0) throw DomainError("partition: negative label at asset " + std::to_string(i));
    if (static_cast<std::size_t>(raw) >= couplings.size()) {
      throw ShapeError("partition: no coupling given for label " + std::to_string(raw));
    }
    auto [it, inserted] = remap.try_emplace(raw, static_cast<int>(remap.size()));
    if (inserted) {
      check_coupling(couplings[static_cast<std::size_t>(raw)]);
      couplings_.push_back(couplings[static_cast<std::size_t>(raw)]);
    }
    labels_.push_back(it->second);
  }
}

Partition Partition::singletons(std::size_t n, double g) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i);
  const std::vector<double> couplings(n, g);
  return Partition(labels, couplings);
}

Partition Partition::single_cluster(std::size_t n, double g) {
  const std::vector<int> labels(n, 0);
  const std::vector<double> couplings{g};
  return Partition(labels, couplings);
}

Partition Partition::blocks(std::span<const std::size_t> sizes, std::span<const double> g) {
  if (g.size() != sizes.size()) throw ShapeError("partition: one coupling per block required");
  std::vector<int> labels;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] == 0) throw DomainError("partition: empty block");
    labels.insert(labels.end(), sizes[s], static_cast<int>(s));
  }
  return Partition(labels, g);
}

int Partition::label(std::size_t asset) const {
  if (asset >= labels_.size()) throw IndexError("partition: asset " + std::to_string(asset) + " out of range");
  return labels_[asset];
}

std::vector<std::size_t> Partition::cluster_sizes() const {
  std::vector<std::size_t> sizes(couplings_.size(), 0);
  for (int l : labels_) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

std::vector<std::vector<std::size_t>> Partition::members() const {
  std::vector<std::vector<std::size_t>> out(couplings_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) out[static_cast<std::size_t>(labels_[i])].push_back(i);
  return out;
}

void Partition::set_coupling(std::size_t cluster, double g) {
  if (cluster >= couplings_.size()) throw IndexError("partition: cluster " + std::to_string(cluster) + " out of range");
  check_coupling(g);
  couplings_[cluster] = g;
}

std::string Partition::canonical_string() const {
  std::ostringstream os;
  const auto groups = members();
  for (std::size_t s = 0; s < groups.size(); ++s) {
    if (s) os << "; ";
    os << '[';
    for (std::size_t k = 0; k < groups[s].size(); ++k) os << (k ? " " : "") << groups[s][k];
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, couplings_[s]);
    os << "] g=" << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Energy and generator

double potts_energy(const Partition& p, const PottsCouplingMatrix& m) {
  const auto n = static_cast<Eigen::Index>(p.size());
  if (m.coupling.rows() != n || m.coupling.cols() != n) {
    throw ShapeError("potts_energy: coupling matrix is " + std::to_string(m.coupling.rows()) + "x" +
                     std::to_string(m.coupling.cols()) + ", partition has " + std::to_string(n) + " assets");
  }
  if (m.external_enabled && m.external.size() != n) {
    throw ShapeError("potts_energy: external field has " + std::to_string(m.external.size()) + " entries");
  }
  double energy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (p.labels()[static_cast<std::size_t>(i)] == p.labels()[static_cast<std::size_t>(j)]) {
        energy -= m.coupling(i, j);
      }
    }
  }
  if (m.external_enabled) {
    if (!(m.inverse_temperature > 0.0)) throw DomainError("potts_energy: inverse temperature must be positive");
    double field = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) field += m.external(i) * (p.labels()[static_cast<std::size_t>(i)] + 1);
    energy -= field / m.inverse_temperature;
  }
  return energy;
}

ClusterNoiseDraw draw_cluster_noise(const Partition& p, RandomStream& rng) {
  ClusterNoiseDraw d;
  d.eta.resize(static_cast<Eigen::Index>(p.n_clusters()));
  d.eps.resize(static_cast<Eigen::Index>(p.size()));
  d.x.resize(static_cast<Eigen::Index>(p.size()));
  for (Eigen::Index s = 0; s < d.eta.size(); ++s) d.eta(s) = rng.normal();
  for (Eigen::Index i = 0; i < d.eps.size(); ++i) d.eps(i) = rng.normal();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto s = static_cast<Eigen::Index>(p.labels()[i]);
    const auto ii = static_cast<Eigen::Index>(i);
    d.x(ii) = compose_cluster_noise(p.couplings()[static_cast<std::size_t>(s)], d.eta(s), d.eps(ii));
  }
  return d;
}

Eigen::MatrixXd generate_cluster_returns(const Partition& p, std::size_t steps, RandomStream& rng) {
  for (double g : p.couplings()) check_coupling(g);
  Eigen::MatrixXd panel(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(p.size()));
  for (std::size_t t = 0; t < steps; ++t) panel.row(static_cast<Eigen::Index>(t)) = draw_cluster_noise(p, rng).x.transpose();
  return panel;
}

// ---------------------------------------------------------------------------
// Likelihood

namespace {

// g^2 is capped so perfectly collinear clusters keep a finite likelihood.
constexpr double kMaxCouplingSquared = 1.0 - 1e-12;

}  // namespace

double optimal_coupling(std::size_t n, double c) {
  if (n < 2) return 0.0;
  const auto nn = static_cast<double>(n);
  const double g2 = (c - nn) / (nn * nn - nn);
  if (!(g2 > 0.0)) return 0.0;
  return std::sqrt(std::min(g2, kMaxCouplingSquared));
}

double cluster_log_likelihood_gain(std::size_t n, double c, std::size_t observations) {
  if (n < 2) return 0.0;
  const auto nn = static_cast<double>(n);
  if (!(c > nn)) return 0.0;
  // Evaluated at the (possibly capped) optimum so that c -> n^2 stays finite.
  const double g2 = std::min((c - nn) / (nn * nn - nn), kMaxCouplingSquared);
  const double one_minus = 1.0 - g2;
  const double spread = 1.0 + (nn - 1.0) * g2;
  const double per_obs = -0.5 * ((nn - 1.0) * std::log(one_minus) + std::log(spread)) -
                         0.5 * (nn - g2 * c / spread) / one_minus + 0.5 * nn;
  return static_cast<double>(observations) * std::max(per_obs, 0.0);
}

Eigen::MatrixXd standardized_correlation(const Eigen::MatrixXd& panel) {
  const Eigen::Index t = panel.rows();
  if (t < 2) throw SampleSizeError("cluster fit: need at least 2 observations");
  Eigen::MatrixXd z = panel.rowwise() - panel.colwise().mean();
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double sd = std::sqrt(z.col(j).squaredNorm() / static_cast<double>(t));
    if (!(sd > 0.0) || !std::isfinite(sd)) {
      throw DataError("cluster fit: column " + std::to_string(j) + " has zero variance");
    }
    z.col(j) /= sd;
  }
  Eigen::MatrixXd c = (z.transpose() * z) / static_cast<double>(t);
  c.diagonal().setOnes();
  return c;
}

namespace {

struct ClusterStats {
  std::size_t n = 0;
  double c = 0.0;
};

std::vector<ClusterStats> cluster_stats(const Eigen::MatrixXd& corr, std::span<const int> labels) {
  const int max_label = labels.empty() ? -1 : *std::max_element(labels.begin(), labels.end());
  std::vector<ClusterStats> stats(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& s = stats[static_cast<std::size_t>(labels[i])];
    ++s.n;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] == labels[i]) s.c += corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  return stats;
}

double cluster_score(std::size_t n, double c, std::size_t observations, double penalty) {
  if (n < 2) return 0.0;
  return cluster_log_likelihood_gain(n, c, observations) - penalty;
}

}  // namespace

double partition_log_likelihood_gain(const Eigen::MatrixXd& correlation, std::span<const int> labels,
                                     std::size_t observations) {
  double total = 0.0;
  for (const auto& s : cluster_stats(correlation, labels)) total += cluster_log_likelihood_gain(s.n, s.c, observations);
  return total;
}

double penalized_objective(const Eigen::MatrixXd& correlation, std::span<const int> labels, std::size_t observations,
                           double penalty_per_cluster) {
  double total = 0.0;
  for (const auto& s : cluster_stats(correlation, labels)) {
    total += cluster_score(s.n, s.c, observations, penalty_per_cluster);
  }
  return total;
}

namespace {

// Mutable labelling with per-slot statistics; slots may be empty.
class SearchState {
 public:
  SearchState(const Eigen::MatrixXd& corr, std::size_t observations, double penalty, std::vector<int> labels)
      : corr_(&corr), observations_(observations), penalty_(penalty), labels_(std::move(labels)) {
    const std::size_t n = labels_.size();
    stats_.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = stats_[static_cast<std::size_t>(labels_[i])];
      ++s.n;
      for (std::size_t j = 0; j < n; ++j) {
        if (labels_[j] == labels_[i]) s.c += at(i, j);
      }
    }
    objective_ = 0.0;
    for (const auto& s : stats_) objective_ += score(s);
  }

  double objective() const { return objective_; }
  const std::vector<int>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  const ClusterStats& stats(int slot) const { return stats_[static_cast<std::size_t>(slot)]; }

  std::vector<int> occupied() const {
    std::vector<int> out;
    for (std::size_t s = 0; s < stats_.size(); ++s) {
      if (stats_[s].n > 0) out.push_back(static_cast<int>(s));
    }
    return out;
  }

  int empty_slot() const {
    for (std::size_t s = 0; s < stats_.size(); ++s) {
      if (stats_[s].n == 0) return static_cast<int>(s);
    }
    return -1;
  }

  // Sum of correlations between asset a and members of slot s, excluding a.
  double row_mass(std::size_t a, int slot) const {
    double m = 0.0;
    for (std::size_t j = 0; j < labels_.size(); ++j) {
      if (j != a && labels_[j] == slot) m += at(a, j);
    }
    return m;
  }

  double move_delta(std::size_t a, int to) const {
    const int from = labels_[a];
    if (from == to) return 0.0;
    const auto& sf = stats(from);
    const auto& st = stats(to);
    const ClusterStats nf{sf.n - 1, sf.c - 2.0 * row_mass(a, from) - 1.0};
    const ClusterStats nt{st.n + 1, st.c + 2.0 * row_mass(a, to) + 1.0};
    return score(nf) + score(nt) - score(sf) - score(st);
  }

  void apply_move(std::size_t a, int to) {
    const int from = labels_[a];
    if (from == to) return;
    objective_ += move_delta(a, to);
    auto& sf = stats_[static_cast<std::size_t>(from)];
    auto& st = stats_[static_cast<std::size_t>(to)];
    sf.c -= 2.0 * row_mass(a, from) + 1.0;
    --sf.n;
    st.c += 2.0 * row_mass(a, to) + 1.0;
    ++st.n;
    labels_[a] = to;
  }

  double cross_mass(int x, int y) const {
    double m = 0.0;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] != x) continue;
      for (std::size_t j = 0; j < labels_.size(); ++j) {
        if (labels_[j] == y) m += at(i, j);
      }
    }
    return m;
  }

  double merge_delta(int x, int y) const {
    const auto& a = stats(x);
    const auto& b = stats(y);
    const ClusterStats merged{a.n + b.n, a.c + b.c + 2.0 * cross_mass(x, y)};
    return score(merged) - score(a) - score(b);
  }

  void apply_merge(int x, int y) {
    objective_ += merge_delta(x, y);
    auto& a = stats_[static_cast<std::size_t>(x)];
    auto& b = stats_[static_cast<std::size_t>(y)];
    a.c += b.c + 2.0 * cross_mass(x, y);
    a.n += b.n;
    b = {};
    for (auto& l : labels_) {
      if (l == y) l = x;
    }
  }

 private:
  double at(std::size_t i, std::size_t j) const {
    return (*corr_)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  double score(const ClusterStats& s) const { return cluster_score(s.n, s.c, observations_, penalty_); }

  const Eigen::MatrixXd* corr_;
  std::size_t observations_;
  double penalty_;
  std::vector<int> labels_;
  std::vector<ClusterStats> stats_;
  double objective_ = 0.0;
};

std::vector<int> exhaustive_search(const Eigen::MatrixXd& corr, std::size_t observations, double penalty) {
  const std::size_t n = static_cast<std::size_t>(corr.rows());
  std::vector<int> rgs(n, 0);      // restricted growth string
  std::vector<int> prefix_max(n, 0);
  std::vector<int> best = rgs;
  double best_score = penalized_objective(corr, rgs, observations, penalty);
  while (true) {
    // Advance to the next restricted growth string.
    std::size_t i = n;
    while (i-- > 1) {
      if (rgs[i] <= prefix_max[i - 1]) break;
    }
    if (i == 0) break;
    ++rgs[i];
    prefix_max[i] = std::max(prefix_max[i - 1], rgs[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      rgs[j] = 0;
      prefix_max[j] = prefix_max[i];
    }
    const double score = penalized_objective(corr, rgs, observations, penalty);
    if (score > best_score) {
      best_score = score;
      best = rgs;
    }
  }
  return best;
}

void greedy_merge(SearchState& state) {
  while (true) {
    const auto occ = state.occupied();
    double best = 1e-12;
    int bx = -1;
    int by = -1;
    for (std::size_t a = 0; a < occ.size(); ++a) {
      for (std::size_t b = a + 1; b < occ.size(); ++b) {
        const double d = state.merge_delta(occ[a], occ[b]);
        if (d > best) {
          best = d;
          bx = occ[a];
          by = occ[b];
        }
      }
    }
    if (bx < 0) return;
    state.apply_merge(bx, by);
  }
}

void greedy_moves(SearchState& state) {
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t a = 0; a < state.size(); ++a) {
      auto targets = state.occupied();
      const int empty = state.empty_slot();
      if (empty >= 0 && state.stats(state.labels()[a]).n > 1) targets.push_back(empty);
      double best = 1e-12;
      int to = -1;
      for (int t : targets) {
        const double d = state.move_delta(a, t);
        if (d > best) {
          best = d;
          to = t;
        }
      }
      if (to >= 0) {
        state.apply_move(a, to);
        improved = true;
      }
    }
  }
}

void polish(SearchState& state) {
  double before = 0.0;
  do {
    before = state.objective();
    greedy_moves(state);
    greedy_merge(state);
  } while (state.objective() > before + 1e-12);
}

std::vector<int> anneal(const Eigen::MatrixXd& corr, std::size_t observations, double penalty,
                        const std::vector<int>& start, std::size_t steps, RandomStream rng) {
  SearchState state(corr, observations, penalty, start);
  std::vector<int> best = state.labels();
  double best_score = state.objective();
  const std::size_t n = state.size();
  const double t_start = 2.0;
  const double t_end = 1e-3;
  const double cooling = steps > 1 ? std::pow(t_end / t_start, 1.0 / static_cast<double>(steps - 1)) : 1.0;
  double temperature = t_start;

  auto accept = [&](double delta) { return delta >= 0.0 || rng.uniform() < std::exp(delta / temperature); };

  for (std::size_t step = 0; step < steps; ++step, temperature *= cooling) {
    const double kind = rng.uniform();
    const auto occ = state.occupied();
    if (kind < 0.8) {
      const auto a = static_cast<std::size_t>(rng.below(n));
      auto targets = occ;
      const int empty = state.empty_slot();
      if (empty >= 0) targets.push_back(empty);
      const int to = targets[rng.below(targets.size())];
      if (to == state.labels()[a]) continue;
      if (accept(state.move_delta(a, to))) state.apply_move(a, to);
    } else if (kind < 0.9) {
      if (occ.size() < 2) continue;
      const auto x = rng.below(occ.size());
      auto y = rng.below(occ.size() - 1);
      if (y >= x) ++y;
      if (accept(state.merge_delta(occ[x], occ[y]))) state.apply_merge(occ[x], occ[y]);
    } else {
      std::vector<int> big;
      for (int s : occ) {
        if (state.stats(s).n > 1) big.push_back(s);
      }
      const int empty = state.empty_slot();
      if (big.empty() || empty < 0) continue;
      const int target = big[rng.below(big.size())];
      auto proposal = state.labels();
      bool moved_any = false;
      bool kept_any = false;
      for (auto& l : proposal) {
        if (l != target) continue;
        if (rng.uniform() < 0.5) {
          l = empty;
          moved_any = true;
        } else {
          kept_any = true;
        }
      }
      if (!moved_any || !kept_any) continue;
      const double current = state.objective();
      SearchState candidate(corr, observations, penalty, std::move(proposal));
      if (accept(candidate.objective() - current)) state = std::move(candidate);
    }
    if (state.objective() > best_score) {
      best_score = state.objective();
      best = state.labels();
    }
  }
  SearchState final_state(corr, observations, penalty, best);
  polish(final_state);
  return final_state.labels();
}

}  // namespace

ClusterFit fit_clusters_ml(const Eigen::MatrixXd& panel, const ClusterFitOptions& options) {
  if (panel.cols() < 2) throw DataError("cluster fit: need at least 2 assets, got " + std::to_string(panel.cols()));
  const auto observations = static_cast<std::size_t>(panel.rows());
  const Eigen::MatrixXd corr = standardized_correlation(panel);
  const std::size_t n = static_cast<std::size_t>(corr.rows());
  const double penalty = options.penalty_per_cluster >= 0.0 ? options.penalty_per_cluster
                                                            : 0.5 * std::log(static_cast<double>(observations));

  ClusterFit fit;
  fit.observations = observations;
  fit.penalty_per_cluster = penalty;
  std::vector<int> best;
  if (n <= options.exhaustive_max_assets) {
    best = exhaustive_search(corr, observations, penalty);
    fit.exhaustive = true;
  } else {
    std::vector<int> start(n);
    for (std::size_t i = 0; i < n; ++i) start[i] = static_cast<int>(i);
    SearchState greedy(corr, observations, penalty, start);
    greedy_merge(greedy);
    polish(greedy);
    best = greedy.labels();
    double best_score = greedy.objective();

    const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);
    std::vector<std::vector<int>> results(restarts);
    auto run = [&](std::size_t r) {
      results[r] = anneal(corr, observations, penalty, greedy.labels(), options.anneal_steps,
                          RandomStream(options.seed, "cluster_fit", r));
    };
    if (options.threads > 1) {
      std::vector<std::future<void>> jobs;
      for (std::size_t r = 0; r < restarts; ++r) jobs.push_back(std::async(std::launch::async, run, r));
      for (auto& j : jobs) j.get();
    } else {
      for (std::size_t r = 0; r < restarts; ++r) run(r);
    }
    for (const auto& labels : results) {
      const double score = penalized_objective(corr, labels, observations, penalty);
      if (score > best_score + 1e-12) {
        best_score = score;
        best = labels;
      }
    }
  }

  const auto stats = cluster_stats(corr, best);
  std::vector<double> couplings(stats.size(), 0.0);
  for (std::size_t s = 0; s < stats.size(); ++s) couplings[s] = optimal_coupling(stats[s].n, stats[s].c);
  fit.partition = Partition(best, couplings);
  fit.log_likelihood_gain = partition_log_likelihood_gain(corr, best, observations);
  fit.objective = penalized_objective(corr, best, observations, penalty);
  return fit;
}

// ---------------------------------------------------------------------------
// Fission-fusion

Partition fission_fusion_step(const Partition& p, RandomStream& rng, const FissionFusionRates& rates) {
  if (!(rates.split_prob >= 0.0 && rates.merge_prob >= 0.0 && rates.split_prob + rates.merge_prob <= 1.0)) {
    throw DomainError("fission-fusion: probabilities must be non-negative with split + merge <= 1");
  }
  const double u = rng.uniform();
  std::vector<int> labels(p.labels().begin(), p.labels().end());
  std::vector<double> couplings(p.couplings().begin(), p.couplings().end());
  const auto sizes = p.cluster_sizes();

  if (u < rates.split_prob) {
    std::vector<std::size_t> candidates;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      if (sizes[s] > 1) candidates.push_back(s);
    }
    if (candidates.empty()) return p;
    const auto target = static_cast<int>(candidates[rng.below(candidates.size())]);
    const int fresh = static_cast<int>(couplings.size());
    const auto members = p.members()[static_cast<std::size_t>(target)];
    std::vector<bool> side(members.size());
    while (true) {
      std::size_t moved = 0;
      for (std::size_t k = 0; k < members.size(); ++k) {
        side[k] = rng.uniform() < 0.5;
        moved += side[k];
      }
      if (moved > 0 && moved < members.size()) break;
    }
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (side[k]) labels[members[k]] = fresh;
    }
    couplings.push_back(couplings[static_cast<std::size_t>(target)]);
    return Partition(labels, couplings);
  }
  if (u < rates.split_prob + rates.merge_prob) {
    const std::size_t q = couplings.size();
    if (q < 2) return p;
    const auto x = rng.below(q);
    auto y = rng.below(q - 1);
    if (y >= x) ++y;
    const auto keep = static_cast<int>(std::min(x, y));
    const auto drop = static_cast<int>(std::max(x, y));
    const double nx = static_cast<double>(sizes[static_cast<std::size_t>(keep)]);
    const double ny = static_cast<double>(sizes[static_cast<std::size_t>(drop)]);
    couplings[static_cast<std::size_t>(keep)] =
        (nx * couplings[static_cast<std::size_t>(keep)] + ny * couplings[static_cast<std::size_t>(drop)]) / (nx + ny);
    for (auto& l : labels) {
      if (l == drop) l = keep;
    }
    return Partition(labels, couplings);
  }
  return p;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ShapeError("adjusted_rand_index: labellings differ in length");
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows;
  std::map<int, double> cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0;
  for (const auto& [key, v] : table) index += pairs(v);
  double sum_rows = 0.0;
  for (const auto& [key, v] : rows) sum_rows += pairs(v);
  double sum_cols = 0.0;
  for (const auto& [key, v] : cols) sum_cols += pairs(v);
  const double total = pairs(static_cast<double>(a.size()));
  if (total == 0.0) return 1.0;
  const double expected = sum_rows * sum_cols / total;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace hiermarket
