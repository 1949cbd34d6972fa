#pragma once

// Size and power experiments on the bivariate AR(1) system with intercept
// breaks.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "estimation.hpp"
#include "hac.hpp"
#include "kl_pso.hpp"
#include "limitdist.hpp"
#include "likelihood.hpp"
#include "random.hpp"

namespace multibreak {

struct BivariateArDgp {
  int T = 100;
  double alpha = 0.0;
  double mu = 1.0;
  double delta1 = 1.0, delta2 = 1.0;
  int k1 = 50, k2 = 50;
  double rho = 0.0;
  int burn_in = 200;
  std::uint64_t seed = 20240101;
};

inline std::vector<Diagnostic> validate(const BivariateArDgp& d) {
  std::vector<Diagnostic> out;
  if (!(std::abs(d.alpha) < 1.0)) out.push_back({"alpha", "AR coefficient must satisfy |alpha| < 1"});
  if (!(std::abs(d.rho) < 1.0)) out.push_back({"rho", "error correlation must satisfy |rho| < 1"});
  if (d.T < 10) out.push_back({"T", "sample size must be at least 10"});
  if (d.k1 < 1 || d.k1 >= d.T) out.push_back({"k1", "break date must lie in 1..T-1"});
  if (d.k2 < 1 || d.k2 >= d.T) out.push_back({"k2", "break date must lie in 1..T-1"});
  if (d.burn_in < 0) out.push_back({"burn_in", "must be non-negative"});
  return out;
}

/// y_it = mu + delta_i 1{k_i < t} + alpha y_i,t-1 + u_it with
/// u_2 = rho e_1 + sqrt(1 - rho^2) e_2. Regressors: constant, y_1,t-1, y_2,t-1.
inline RegressorPanel gen_bivariate_ar(const BivariateArDgp& d, std::uint64_t rep) {
  if (const auto diag = validate(d); !diag.empty()) throw ConfigError(format_diagnostics(diag));
  Stream rng(d.seed, rep, tags::tag(tags::dgp));
  const double sr = std::sqrt(1.0 - d.rho * d.rho);
  double y[2];
  y[0] = y[1] = d.mu / (1.0 - d.alpha);
  auto step = [&](double s1, double s2) {
    const double e1 = rng.normal(), e2 = rng.normal();
    const double u[2] = {e1, d.rho * e1 + sr * e2};
    const double shift[2] = {s1, s2};
    for (int i = 0; i < 2; ++i) y[i] = d.mu + shift[i] + d.alpha * y[i] + u[i];
  };
  for (int b = 0; b < d.burn_in; ++b) step(0.0, 0.0);
  Eigen::MatrixXd Y(d.T, 2);
  Eigen::VectorXd lag1(d.T), lag2(d.T);
  for (int t = 1; t <= d.T; ++t) {
    lag1(t - 1) = y[0];
    lag2(t - 1) = y[1];
    step(d.k1 < t ? d.delta1 : 0.0, d.k2 < t ? d.delta2 : 0.0);
    Y(t - 1, 0) = y[0];
    Y(t - 1, 1) = y[1];
  }
  return RegressorPanel(Y, {Regressor::constant(), Regressor::stationary("y1_lag", lag1), Regressor::stationary("y2_lag", lag2)},
                        {"y1", "y2"});
}

/// Each equation: intercept and own lag; one group per equation; AR
/// coefficients and the error covariance constant across regimes.
inline SystemSpec bivariate_ar_spec(double trim, int breaks = 1) {
  SystemSpec s = SystemSpec::from_equations({{0, 1}, {0, 2}}, 3, {"y1", "y2"}, {"const", "y1_lag", "y2_lag"});
  s.groups = {{0, 1}, {2, 3}};
  s.hold_constant(1);
  s.hold_constant(3);
  s.sigma_constant = true;
  s.breaks = breaks;
  s.trim = trim;
  return s;
}

struct ExperimentConfig {
  std::vector<double> alphas{0.0, 0.4, 0.8};
  std::vector<std::pair<double, double>> deltas;
  double trim = 0.15;
  double rho = 0.0;
  int T = 100;
  int k1 = 50;
  std::vector<int> k2s{50};
  int reps = 500;
  int cv_reps = 1000;
  std::vector<double> levels{0.10, 0.05, 0.01};
  std::uint64_t seed = 20240101;
  unsigned threads = 0;
  std::string cv_method = "direct";
  GridConfig grid;
  KlConfig kl;
  HacConfig hac;
  SearchOptions search;
};

/// The 15 (delta_1 <= delta_2) pairs over {0.5, 0.75, 1, 1.25, 1.5}.
inline std::vector<std::pair<double, double>> size_delta_grid() {
  const double v[5] = {0.5, 0.75, 1.0, 1.25, 1.5};
  std::vector<std::pair<double, double>> out;
  for (int a = 0; a < 5; ++a)
    for (int b = a; b < 5; ++b) out.emplace_back(v[a], v[b]);
  return out;
}

/// All nine (delta_1, delta_2) pairs over {0.5, 1, 1.5}; delta_1 picks the
/// panel and delta_2 the curve within it.
inline std::vector<std::pair<double, double>> power_delta_grid() {
  const double v[3] = {0.5, 1.0, 1.5};
  std::vector<std::pair<double, double>> out;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) out.emplace_back(v[a], v[b]);
  return out;
}

struct CellResult {
  double alpha = 0.0, delta1 = 0.0, delta2 = 0.0, trim = 0.0, rho = 0.0;
  int k1 = 0, k2 = 0;
  int reps = 0, valid = 0, failures = 0;
  std::vector<double> levels;
  std::vector<double> rejection;  ///< per level, over valid replications
  double mean_statistic = 0.0;
  bool invalid = false;
  std::vector<std::string> failure_messages;  ///< first few, for the log

  double std_error(std::size_t level) const {
    const double p = levels[level];
    return valid > 0 ? std::sqrt(p * (1.0 - p) / valid) : 0.0;
  }
};

/// Per-replication seed of the critical-value simulation.
inline std::uint64_t cv_seed(std::uint64_t master, std::uint64_t rep) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (rep + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct ReplicationOutcome {
  bool ok = false;
  double statistic = 0.0;
  std::vector<double> critical_values;
  std::string error;
};

/// One replication: simulate, test, simulate critical values from the
/// plug-in nuisances of the common-break fit.
inline ReplicationOutcome run_replication(const BivariateArDgp& dgp, const ExperimentConfig& cfg, std::uint64_t rep) {
  ReplicationOutcome out;
  try {
    const RegressorPanel panel = gen_bivariate_ar(dgp, rep);
    const Model model(panel, bivariate_ar_spec(cfg.trim));
    SearchOptions so = cfg.search;
    so.threads = 1;
    const TestOutcome t = cb_statistic(model, so);
    const NuisanceSet ns = plug_in_nuisance(model, t.restricted.fit, cfg.hac);
    LimitOptions lo;
    lo.reps = cfg.cv_reps;
    lo.grid = cfg.grid;
    lo.seed = cv_seed(cfg.seed, rep);
    lo.threads = 1;
    lo.levels = cfg.levels;
    const LimitSample ls = cfg.cv_method == "kl-pso" ? simulate_kl_pso(ns, lo, cfg.kl) : simulate_direct(ns, lo);
    out.statistic = t.statistic;
    out.critical_values = ls.critical_values;
    out.ok = true;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

inline CellResult run_cell(const ExperimentConfig& cfg, double alpha, double d1, double d2, int k1, int k2) {
  if (cfg.reps < 1) throw ConfigError("experiment needs at least one replication");
  if (cfg.cv_method != "direct" && cfg.cv_method != "kl-pso") throw ConfigError("unknown cv method '" + cfg.cv_method + "'");
  BivariateArDgp dgp;
  dgp.T = cfg.T;
  dgp.alpha = alpha;
  dgp.delta1 = d1;
  dgp.delta2 = d2;
  dgp.k1 = k1;
  dgp.k2 = k2;
  dgp.rho = cfg.rho;
  dgp.seed = cfg.seed;
  std::vector<ReplicationOutcome> res(static_cast<std::size_t>(cfg.reps));
  parallel_for(res.size(), cfg.threads, [&](std::size_t r) { res[r] = run_replication(dgp, cfg, r); });
  CellResult c;
  c.alpha = alpha;
  c.delta1 = d1;
  c.delta2 = d2;
  c.k1 = k1;
  c.k2 = k2;
  c.trim = cfg.trim;
  c.rho = cfg.rho;
  c.reps = cfg.reps;
  c.levels = cfg.levels;
  c.rejection.assign(cfg.levels.size(), 0.0);
  double sum = 0.0;
  for (const auto& r : res) {
    if (!r.ok) {
      ++c.failures;
      if (c.failure_messages.size() < 5) c.failure_messages.push_back(r.error);
      continue;
    }
    ++c.valid;
    sum += r.statistic;
    for (std::size_t l = 0; l < cfg.levels.size(); ++l)
      if (r.statistic > r.critical_values[l]) c.rejection[l] += 1.0;
  }
  if (c.valid > 0) {
    for (auto& v : c.rejection) v /= c.valid;
    c.mean_statistic = sum / c.valid;
  }
  c.invalid = static_cast<double>(c.failures) >= 0.01 * cfg.reps && c.failures > 0;
  return c;
}

/// Common break at k1 = k2 = cfg.k1 for every (alpha, delta pair) cell.
inline std::vector<CellResult> run_size_experiment(const ExperimentConfig& cfg) {
  std::vector<CellResult> out;
  const auto deltas = cfg.deltas.empty() ? size_delta_grid() : cfg.deltas;
  for (double a : cfg.alphas)
    for (const auto& d : deltas) out.push_back(run_cell(cfg, a, d.first, d.second, cfg.k1, cfg.k1));
  return out;
}

/// k1 fixed, k2 over cfg.k2s, for every (alpha, delta pair) cell.
inline std::vector<CellResult> run_power_experiment(const ExperimentConfig& cfg) {
  std::vector<CellResult> out;
  const auto deltas = cfg.deltas.empty() ? power_delta_grid() : cfg.deltas;
  for (double a : cfg.alphas)
    for (const auto& d : deltas)
      for (int k2 : cfg.k2s) out.push_back(run_cell(cfg, a, d.first, d.second, cfg.k1, k2));
  return out;
}

inline std::string format_level(double a) {
  std::ostringstream os;
  os << a * 100 << "%";
  return os.str();
}

inline void write_cells_csv(std::ostream& os, const std::vector<CellResult>& cells) {
  os << "alpha,delta1,delta2,k1,k2,difference,trim,rho,reps,valid,failures,invalid,mean_statistic";
  if (!cells.empty())
    for (double l : cells.front().levels) os << ",reject_" << l;
  os << "\n";
  os << std::setprecision(6);
  for (const auto& c : cells) {
    os << c.alpha << "," << c.delta1 << "," << c.delta2 << "," << c.k1 << "," << c.k2 << "," << (c.k2 - c.k1) << ","
       << c.trim << "," << c.rho << "," << c.reps << "," << c.valid << "," << c.failures << ","
       << (c.invalid ? "true" : "false") << "," << c.mean_statistic;
    for (double r : c.rejection) os << "," << r;
    os << "\n";
  }
}

/// Rows by delta pair, one block of levels per alpha.
inline void write_size_table(std::ostream& os, const std::vector<CellResult>& cells) {
  if (cells.empty()) return;
  std::vector<double> alphas;
  for (const auto& c : cells)
    if (std::find(alphas.begin(), alphas.end(), c.alpha) == alphas.end()) alphas.push_back(c.alpha);
  const auto& levels = cells.front().levels;
  os << std::fixed;
  os << std::setw(6) << "d1" << std::setw(6) << "d2";
  for (double a : alphas) {
    os << "  |";
    for (std::size_t l = 0; l < levels.size(); ++l) {
      std::ostringstream h;
      h << "a=" << std::fixed << std::setprecision(1) << a << " " << format_level(levels[l]);
      os << std::setw(14) << h.str();
    }
  }
  os << "\n";
  std::vector<std::pair<double, double>> pairs;
  for (const auto& c : cells)
    if (std::find(pairs.begin(), pairs.end(), std::make_pair(c.delta1, c.delta2)) == pairs.end())
      pairs.emplace_back(c.delta1, c.delta2);
  for (const auto& p : pairs) {
    os << std::setprecision(2) << std::setw(6) << p.first << std::setw(6) << p.second;
    for (double a : alphas) {
      os << "  |";
      const auto it = std::find_if(cells.begin(), cells.end(), [&](const CellResult& c) {
        return c.alpha == a && c.delta1 == p.first && c.delta2 == p.second;
      });
      for (std::size_t l = 0; l < levels.size(); ++l) {
        if (it == cells.end()) {
          os << std::setw(14) << "-";
        } else {
          std::ostringstream v;
          v << std::setprecision(3) << std::fixed << it->rejection[l] << (it->invalid ? "*" : "");
          os << std::setw(14) << v.str();
        }
      }
    }
    os << "\n";
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace multibreak
