#pragma once

// Test-only oracles. These deliberately avoid the cached statistics and the
// null-space machinery used by the library.

#include <multibreak/core.hpp>
#include <multibreak/estimation.hpp>
#include <multibreak/likelihood.hpp>
#include <multibreak/random.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace mbtest {

using namespace multibreak;

/// Random system: n equations, intercept plus optionally one common
/// stationary regressor, Gaussian errors with a random covariance and a
/// random mean shift somewhere in the middle.
inline RegressorPanel random_panel(Stream& rng, int T, int n, bool slope) {
  Eigen::MatrixXd y(T, n);
  Eigen::VectorXd x(T);
  for (int t = 0; t < T; ++t) x(t) = rng.normal();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k <= i; ++k) L(i, k) = i == k ? 0.5 + rng.uniform() : 0.5 * rng.normal();
  const int brk = T / 3 + static_cast<int>(rng.uniform() * (T / 3));
  for (int i = 0; i < n; ++i) {
    const double shift = 2.0 * rng.normal();
    for (int t = 0; t < T; ++t) y(t, i) = (t >= brk ? shift : 0.0) + (slope ? 0.7 * x(t) : 0.0);
  }
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd e(n);
    for (int i = 0; i < n; ++i) e(i) = rng.normal();
    y.row(t) += (L * e).transpose();
  }
  std::vector<Regressor> regs{Regressor::constant()};
  if (slope) regs.push_back(Regressor::stationary("x", x));
  return RegressorPanel(y, regs);
}

/// log L summed observation by observation with explicit X_t.
inline double naive_loglik(const RegressorPanel& panel, const SystemSpec& spec, const Segmentation& seg,
                           const ParamSet& ps) {
  double acc = 0.0;
  const int n = spec.n;
  for (int t = 1; t <= panel.T(); ++t) {
    // X_t = S'(x_t kron I_n), p x n
    Eigen::MatrixXd kx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.q) * n, n);
    for (int a = 0; a < spec.q; ++a)
      kx.block(a * n, 0, n, n) = panel.design()(t - 1, a) * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd X = spec.S.transpose() * kx;
    Eigen::VectorXd beta(spec.p);
    for (int l = 0; l < spec.p; ++l) {
      const int g = spec.group_of(l);
      int j = 0;
      for (int k : seg.dates(g))
        if (k < t) ++j;
      beta(l) = ps.beta[static_cast<std::size_t>(j)](l);
    }
    int js = 0;
    for (int k : seg.dates(spec.G() - 1))
      if (k < t) ++js;
    acc += log_density(panel.y().row(t - 1).transpose(), X.transpose(), beta, ps.sigma[static_cast<std::size_t>(js)]);
  }
  return acc;
}

/// Iterated feasible GLS without restrictions, assembled from explicit
/// per-observation design matrices over the full stacked parameter vector.
inline double naive_fgls(const RegressorPanel& panel, const SystemSpec& spec, const Segmentation& seg,
                         int max_it = 200, double tol = 1e-12) {
  const int n = spec.n, p = spec.p, m = seg.breaks(), T = panel.T();
  const int P = p * (m + 1);
  auto regime = [&](int g, int t) {
    int j = 0;
    for (int k : seg.dates(g))
      if (k < t) ++j;
    return j;
  };
  std::vector<Eigen::MatrixXd> Z(static_cast<std::size_t>(T));  // n x P
  for (int t = 1; t <= T; ++t) {
    Eigen::MatrixXd kx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.q) * n, n);
    for (int a = 0; a < spec.q; ++a)
      kx.block(a * n, 0, n, n) = panel.design()(t - 1, a) * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd Xt = (spec.S.transpose() * kx).transpose();  // n x p
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, P);
    for (int l = 0; l < p; ++l) z.col(regime(spec.group_of(l), t) * p + l) = Xt.col(l);
    Z[static_cast<std::size_t>(t - 1)] = z;
  }
  const int S = spec.sigma_constant ? 1 : m + 1;
  std::vector<Eigen::MatrixXd> sig(static_cast<std::size_t>(S), Eigen::MatrixXd::Identity(n, n));
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_it; ++it) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(P);
    for (int t = 1; t <= T; ++t) {
      const int s = spec.sigma_constant ? 0 : regime(spec.G() - 1, t);
      const Eigen::MatrixXd W = sig[static_cast<std::size_t>(s)].inverse();
      const auto& z = Z[static_cast<std::size_t>(t - 1)];
      H += z.transpose() * W * z;
      b += z.transpose() * W * panel.y().row(t - 1).transpose();
    }
    const Eigen::VectorXd th = H.ldlt().solve(b);
    std::vector<Eigen::MatrixXd> acc(static_cast<std::size_t>(S), Eigen::MatrixXd::Zero(n, n));
    std::vector<int> cnt(static_cast<std::size_t>(S), 0);
    for (int t = 1; t <= T; ++t) {
      const int s = spec.sigma_constant ? 0 : regime(spec.G() - 1, t);
      const Eigen::VectorXd r = panel.y().row(t - 1).transpose() - Z[static_cast<std::size_t>(t - 1)] * th;
      acc[static_cast<std::size_t>(s)] += r * r.transpose();
      ++cnt[static_cast<std::size_t>(s)];
    }
    for (int s = 0; s < S; ++s) sig[static_cast<std::size_t>(s)] = acc[static_cast<std::size_t>(s)] / cnt[static_cast<std::size_t>(s)];
    double ll = 0.0;
    for (int t = 1; t <= T; ++t) {
      const int s = spec.sigma_constant ? 0 : regime(spec.G() - 1, t);
      const Eigen::MatrixXd& sg = sig[static_cast<std::size_t>(s)];
      const Eigen::VectorXd r = panel.y().row(t - 1).transpose() - Z[static_cast<std::size_t>(t - 1)] * th;
      ll += -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(sg.determinant()) -
            0.5 * r.dot(sg.inverse() * r);
    }
    if (std::abs(ll - prev) < tol * std::max(1.0, std::abs(ll))) return ll;
    prev = ll;
  }
  return prev;
}

struct BruteForce {
  Segmentation seg;
  double loglik = -std::numeric_limits<double>::infinity();
};

/// Exhaustive enumeration of every admissible segmentation that is common
/// within each block, scored by naive_fgls.
inline BruteForce brute_force(const RegressorPanel& panel, const SystemSpec& spec, const BlockPartition& blocks) {
  const int T = panel.T(), h = spec.min_spacing(T), m = spec.breaks, G = spec.G();
  std::vector<std::vector<int>> tuples;
  // m-tuples with spacing h, built without the library enumerator
  std::vector<int> cur;
  auto rec = [&](auto&& self) -> void {
    if (static_cast<int>(cur.size()) == m) {
      if (T - (cur.empty() ? 0 : cur.back()) >= h) tuples.push_back(cur);
      return;
    }
    for (int k = (cur.empty() ? 0 : cur.back()) + h; k < T; ++k) {
      cur.push_back(k);
      self(self);
      cur.pop_back();
    }
  };
  rec(rec);
  BruteForce best;
  std::vector<std::size_t> idx(blocks.size(), 0);
  while (true) {
    std::vector<std::vector<int>> d(static_cast<std::size_t>(G));
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (int g : blocks[b]) d[static_cast<std::size_t>(g)] = tuples[idx[b]];
    Segmentation seg(d);
    const double ll = naive_fgls(panel, spec, seg);
    if (ll > best.loglik || (ll == best.loglik && seg < best.seg)) best = {seg, ll};
    std::size_t b = blocks.size();
    while (b > 0) {
      --b;
      if (++idx[b] < tuples.size()) break;
      idx[b] = 0;
      if (b == 0) return best;
    }
    if (blocks.empty()) return best;
  }
}

struct Instance {
  RegressorPanel panel;
  SystemSpec spec;
};

/// Random pure-change system: T in [18, 24], n <= 2, G <= 2, m = 1.
inline Instance random_instance(Stream& rng, double trim = 0.2) {
  const int T = 18 + static_cast<int>(rng.uniform() * 7);
  const int n = rng.uniform() < 0.5 ? 1 : 2;
  const bool slope = n == 1 || rng.uniform() < 0.3;
  RegressorPanel panel = mbtest::random_panel(rng, T, n, slope);
  std::vector<std::vector<int>> eqs;
  for (int i = 0; i < n; ++i) eqs.push_back(slope ? std::vector<int>{0, 1} : std::vector<int>{0});
  SystemSpec s = SystemSpec::from_equations(eqs, slope ? 2 : 1);
  s.breaks = 1;
  s.trim = trim;
  if (rng.uniform() < 0.8 && s.p >= 2) {
    std::vector<int> g1, g2;
    for (int l = 0; l < s.p; ++l) (l < s.p / 2 ? g1 : g2).push_back(l);
    s.groups = {g1, g2};
  }
  return {std::move(panel), std::move(s)};
}


}  // namespace mbtest
