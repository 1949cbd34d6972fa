#pragma once

// Continuous-offset backend: each one-sided Brownian coordinate on [0, M] is a
// truncated Karhunen-Loeve sine series, and the suprema are found by particle
// swarm optimization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "limitdist.hpp"

namespace multibreak {

struct PsoConfig {
  int particles = 40;
  int iterations = 200;
  int restarts = 3;
  double inertia = 0.729;
  double cognitive = 1.49445;
  double social = 1.49445;
};

struct PsoResult {
  Eigen::VectorXd x;
  double value = -std::numeric_limits<double>::infinity();
  int agreeing_restarts = 0;  ///< restarts whose best is within tolerance of the overall best
  bool converged() const { return agreeing_restarts >= 2; }
};

/// Maximize f over the box [lo, hi]^dim. Each restart starts one particle at
/// the matching entry of `seeds` when given.
template <class F>
PsoResult pso_maximize(F&& f, int dim, double lo, double hi, const PsoConfig& cfg, Stream& rng,
                       const std::vector<Eigen::VectorXd>& seeds = {}) {
  PsoResult best;
  std::vector<double> restart_best;
  const double range = hi - lo, vmax = range;
  for (int rs = 0; rs < cfg.restarts; ++rs) {
    const int P = cfg.particles;
    std::vector<Eigen::VectorXd> x(static_cast<std::size_t>(P)), v(static_cast<std::size_t>(P)), pb(static_cast<std::size_t>(P));
    std::vector<double> pv(static_cast<std::size_t>(P));
    Eigen::VectorXd gb;
    double gv = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < P; ++i) {
      auto& xi = x[static_cast<std::size_t>(i)];
      xi.resize(dim);
      v[static_cast<std::size_t>(i)].resize(dim);
      for (int d = 0; d < dim; ++d) {
        xi(d) = lo + range * rng.uniform();
        v[static_cast<std::size_t>(i)](d) = (rng.uniform() - 0.5) * range * 0.2;
      }
      if (i == 0 && static_cast<std::size_t>(rs) < seeds.size()) xi = seeds[static_cast<std::size_t>(rs)].cwiseMax(lo).cwiseMin(hi);
      pb[static_cast<std::size_t>(i)] = xi;
      pv[static_cast<std::size_t>(i)] = f(xi);
      if (pv[static_cast<std::size_t>(i)] > gv) gv = pv[static_cast<std::size_t>(i)], gb = xi;
    }
    for (int it = 0; it < cfg.iterations; ++it) {
      for (int i = 0; i < P; ++i) {
        const auto si = static_cast<std::size_t>(i);
        for (int d = 0; d < dim; ++d) {
          const double r1 = rng.uniform(), r2 = rng.uniform();
          double vd = cfg.inertia * v[si](d) + cfg.cognitive * r1 * (pb[si](d) - x[si](d)) + cfg.social * r2 * (gb(d) - x[si](d));
          vd = std::clamp(vd, -vmax, vmax);
          double xd = x[si](d) + vd;
          if (xd < lo) xd = lo, vd = 0.0;
          if (xd > hi) xd = hi, vd = 0.0;
          v[si](d) = vd;
          x[si](d) = xd;
        }
        const double val = f(x[si]);
        if (val > pv[si]) {
          pv[si] = val;
          pb[si] = x[si];
          if (val > gv) gv = val, gb = x[si];
        }
      }
    }
    restart_best.push_back(gv);
    if (gv > best.value) best.value = gv, best.x = gb;
  }
  const double tol = 1e-8 * (1.0 + std::abs(best.value));
  best.agreeing_restarts = static_cast<int>(
      std::count_if(restart_best.begin(), restart_best.end(), [&](double b) { return best.value - b <= tol; }));
  return best;
}

/// Orthonormal DCT-IV: X_k = sqrt(2/N) sum_l x_l cos(pi/N (l+1/2)(k+1/2)).
inline Eigen::MatrixXd dct4_rows(const Eigen::MatrixXd& x) {
  const auto N = x.rows();
  Eigen::MatrixXd c(N, N);
  const double sc = std::sqrt(2.0 / static_cast<double>(N));
  for (Eigen::Index k = 0; k < N; ++k)
    for (Eigen::Index l = 0; l < N; ++l)
      c(k, l) = sc * std::cos(std::numbers::pi / static_cast<double>(N) * (static_cast<double>(l) + 0.5) *
                              (static_cast<double>(k) + 0.5));
  return c * x;
}

struct KlConfig {
  int terms = 500;
  PsoConfig pso;
};

/// Series coefficients for one break and one draw. The leading coefficients
/// are the DCT-IV of the direct backend's standardized grid increments, so
/// both backends see approximately the same Brownian paths; the remainder are
/// fresh draws.
class KlPaths {
 public:
  using coord = int;

  KlPaths(const BreakTables& bt, const DrawScalars& ds, const GridConfig& grid, const KlConfig& kl, std::uint64_t seed,
          std::uint64_t rep)
      : G_(bt.G), K_(kl.terms), M_(grid.M) {
    const int N = grid.points_per_side(), j = bt.break_index();
    for (int side = 0; side < 2; ++side) {
      const auto sd = static_cast<std::size_t>(side);
      const Eigen::MatrixXd Zz = coefficients(seed, rep, side == 0 ? tags::zeta_pre : tags::zeta_post,
                                              side == 0 ? tags::kl_zeta_pre : tags::kl_zeta_post, j, N, bt.nz);
      const Eigen::MatrixXd Ze = coefficients(seed, rep, side == 0 ? tags::eta_pre : tags::eta_post,
                                              side == 0 ? tags::kl_eta_pre : tags::kl_eta_post, j, N, bt.nv);
      coef_[sd].resize(2 * G_, K_);
      for (int g = 0; g < G_; ++g)
        for (int k = 0; k < 2; ++k) coef_[sd].row(g * 2 + k) = (Zz * ds.load[BreakTables::idx(g, k, side)]).transpose();
      pic_[sd] = Ze * bt.pi_load[sd];
      for (int kk = 0; kk < K_; ++kk) {
        const double sc = std::sqrt(2.0 * M_) / ((kk + 0.5) * std::numbers::pi);
        coef_[sd].col(kk) *= sc;
        pic_[sd](kk) *= sc;
      }
    }
    slots_.assign(static_cast<std::size_t>(G_), Slot{});
    for (auto& s : slots_) s.pv.assign(static_cast<std::size_t>(2 * G_), 0.0);
  }

  /// Evaluate the projections at offset s into slot i: every group's and
  /// the trace term when `all` is set (the last group's slot), otherwise
  /// only group i's.
  void set(int i, double s, bool all = true) {
    Slot& sl = slots_[static_cast<std::size_t>(i)];
    sl.s = s;
    std::fill(sl.pv.begin(), sl.pv.end(), 0.0);
    sl.pi = 0.0;
    if (s == 0.0) return;
    const auto sd = static_cast<std::size_t>(s > 0.0 ? 1 : 0);
    const double th = std::numbers::pi * std::abs(s) / M_;
    const double two_c = 2.0 * std::cos(th);
    double cur = std::sin(0.5 * th), prev = -cur;
    const Eigen::MatrixXd& C = coef_[sd];
    const Eigen::VectorXd& P = pic_[sd];
    const int r0 = all ? 0 : 2 * i, r1 = all ? 2 * G_ : 2 * i + 2;
    double pi = 0.0;
    for (int kk = 0; kk < K_; ++kk) {
      for (int r = r0; r < r1; ++r) sl.pv[static_cast<std::size_t>(r)] += C(r, kk) * cur;
      if (all) pi += P(kk) * cur;
      const double next = two_c * cur - prev;
      prev = cur;
      cur = next;
    }
    sl.pi = pi;
  }

  /// Slot i takes group i's projections from slot `from` (same offset).
  void copy_group(int i, int from) {
    Slot& sl = slots_[static_cast<std::size_t>(i)];
    const Slot& src = slots_[static_cast<std::size_t>(from)];
    sl.s = src.s;
    sl.pv[static_cast<std::size_t>(2 * i)] = src.pv[static_cast<std::size_t>(2 * i)];
    sl.pv[static_cast<std::size_t>(2 * i + 1)] = src.pv[static_cast<std::size_t>(2 * i + 1)];
  }

  double s(int i) const { return slots_[static_cast<std::size_t>(i)].s; }
  double pv(int g, int k, int i) const { return slots_[static_cast<std::size_t>(i)].pv[static_cast<std::size_t>(g * 2 + k)]; }
  double pi(int i) const { return slots_[static_cast<std::size_t>(i)].pi; }

  /// Standard Brownian value of coordinate c on one side at |s| (tests).
  static double series_value(const Eigen::VectorXd& z, double a, double M) {
    double v = 0.0;
    for (Eigen::Index kk = 0; kk < z.size(); ++kk) {
      const double w = (static_cast<double>(kk) + 0.5) * std::numbers::pi;
      v += z(kk) * std::sqrt(2.0 * M) * std::sin(w * a / M) / w;
    }
    return v;
  }

  /// K x dim standard normal coefficients for one side.
  Eigen::MatrixXd coefficients(std::uint64_t seed, std::uint64_t rep, std::uint32_t grid_kind, std::uint32_t tail_kind,
                               int j, int N, int dim) const {
    Eigen::MatrixXd Z(K_, dim);
    const auto inc = side_increments(seed, rep, tags::tag(grid_kind, j), N, dim);
    Eigen::MatrixXd x(N, dim);
    for (int l = 0; l < N; ++l)
      for (int c = 0; c < dim; ++c) x(l, c) = inc[static_cast<std::size_t>(l) * static_cast<std::size_t>(dim) + static_cast<std::size_t>(c)];
    const Eigen::MatrixXd lead = dct4_rows(x);
    const int nl = std::min(N, K_);
    Z.topRows(nl) = lead.topRows(nl);
    Stream tail(seed, rep, tags::tag(tail_kind, j));
    for (int kk = nl; kk < K_; ++kk)
      for (int c = 0; c < dim; ++c) Z(kk, c) = tail.normal();
    return Z;
  }

 private:
  struct Slot {
    double s = 0.0;
    std::vector<double> pv;
    double pi = 0.0;
  };
  int G_, K_;
  double M_;
  std::array<Eigen::MatrixXd, 2> coef_;
  std::array<Eigen::VectorXd, 2> pic_;
  std::vector<Slot> slots_;
};

struct KlBreakResult {
  double unrestricted = 0.0, restricted = 0.0;
  std::vector<double> argmax_u, argmax_r;
  bool converged = true;
};

/// Suprema of CB^{(j)} over continuous offsets for one break and one draw.
inline KlBreakResult kl_break_suprema(const BreakTables& bt, const DrawScalars& ds, KlPaths& kp, double M,
                                      const std::vector<GroupRole>& roles, const PsoConfig& pso, Stream& rng) {
  const int G = bt.G;
  const CbEvaluator<KlPaths> ev(bt, ds, kp);
  std::vector<int> slot(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) slot[static_cast<std::size_t>(g)] = g;
  const int L = G - 1;
  auto eval_offsets = [&](const std::vector<double>& s) {
    kp.set(L, s[static_cast<std::size_t>(L)]);
    for (int g = 0; g < L; ++g) {
      if (s[static_cast<std::size_t>(g)] == s[static_cast<std::size_t>(L)]) kp.copy_group(g, L);
      else kp.set(g, s[static_cast<std::size_t>(g)], false);
    }
    return ev.value(slot);
  };

  // coordinates of the restricted problem: one tied offset, then free groups
  std::vector<int> free_groups, movers;
  bool any_tied = false;
  for (int g = 0; g < G; ++g) {
    const auto r = roles[static_cast<std::size_t>(g)];
    if (r == GroupRole::Free) free_groups.push_back(g);
    if (r == GroupRole::Tied) any_tied = true;
    if (r != GroupRole::Pinned) movers.push_back(g);
  }
  auto restricted_offsets = [&](const Eigen::VectorXd& x) {
    std::vector<double> s(static_cast<std::size_t>(G), 0.0);
    int c = 0;
    if (any_tied) {
      for (int g = 0; g < G; ++g)
        if (roles[static_cast<std::size_t>(g)] == GroupRole::Tied) s[static_cast<std::size_t>(g)] = x(0);
      c = 1;
    }
    for (int g : free_groups) s[static_cast<std::size_t>(g)] = x(c++);
    return s;
  };
  auto unrestricted_offsets = [&](const Eigen::VectorXd& x) {
    std::vector<double> s(static_cast<std::size_t>(G), 0.0);
    for (std::size_t c = 0; c < movers.size(); ++c) s[static_cast<std::size_t>(movers[c])] = x(static_cast<Eigen::Index>(c));
    return s;
  };

  KlBreakResult out;
  const int dr = (any_tied ? 1 : 0) + static_cast<int>(free_groups.size());
  const int du = static_cast<int>(movers.size());
  if (du == 0) {
    out.argmax_u.assign(static_cast<std::size_t>(G), 0.0);
    out.argmax_r = out.argmax_u;
    return out;
  }
  const PsoResult rr = pso_maximize([&](const Eigen::VectorXd& x) { return eval_offsets(restricted_offsets(x)); }, dr, -M, M,
                                    pso, rng);
  out.restricted = rr.value;
  out.argmax_r = restricted_offsets(rr.x);
  Eigen::VectorXd seed(du);
  for (std::size_t c = 0; c < movers.size(); ++c)
    seed(static_cast<Eigen::Index>(c)) = out.argmax_r[static_cast<std::size_t>(movers[c])];
  int tied_movers = 0;
  for (int g : movers) tied_movers += roles[static_cast<std::size_t>(g)] == GroupRole::Tied ? 1 : 0;
  if (tied_movers <= 1) {
    // tying a single group restricts nothing: both suprema are one problem
    out.unrestricted = out.restricted;
    out.argmax_u = out.argmax_r;
    out.converged = rr.converged();
    return out;
  }
  const std::vector<Eigen::VectorXd> seeds(static_cast<std::size_t>(pso.restarts), seed);
  const PsoResult ur = pso_maximize([&](const Eigen::VectorXd& x) { return eval_offsets(unrestricted_offsets(x)); }, du, -M,
                                    M, pso, rng, seeds);
  out.unrestricted = ur.value;
  out.argmax_u = unrestricted_offsets(ur.x);
  out.converged = rr.converged() && ur.converged();
  return out;
}

inline LimitSample simulate_kl_pso(const NuisanceSet& ns, const LimitOptions& opt, const KlConfig& kl = {}) {
  if (opt.reps < 100) throw ConfigError("limit simulation needs at least 100 replications");
  if (kl.terms < 1) throw ConfigError("KL series needs at least one term");
  const auto roles = resolve_roles(opt.roles, ns.G);
  std::vector<BreakTables> tables;
  for (std::size_t j = 0; j < ns.breaks.size(); ++j)
    tables.emplace_back(ns, static_cast<int>(j), opt.variance_drift_as_printed);
  LimitSample out;
  out.backend = "kl-pso";
  out.seed = opt.seed;
  const auto R = static_cast<std::size_t>(opt.reps);
  out.draws.assign(R, 0.0);
  out.restricted_argmax.assign(R, 0.0);
  std::vector<char> hit(R, 0), warn(R, 0), floored(R, 0);
  const double M = opt.grid.M;
  parallel_for(R, opt.threads, [&](std::size_t rep) {
    double total = 0.0;
    for (std::size_t j = 0; j < tables.size(); ++j) {
      const auto& bt = tables[j];
      const DrawScalars ds = draw_scalars(bt, draw_vw(bt, opt.seed, rep));
      KlPaths kp(bt, ds, opt.grid, kl, opt.seed, rep);
      Stream rng(opt.seed, rep, tags::tag(tags::pso, static_cast<int>(j)));
      const KlBreakResult r = kl_break_suprema(bt, ds, kp, M, roles, kl.pso, rng);
      double d = r.unrestricted - r.restricted;
      if (d < 0.0) d = 0.0, floored[rep] = 1;
      total += d;
      auto at_edge = [&](const std::vector<double>& s) {
        return std::any_of(s.begin(), s.end(), [&](double v) { return std::abs(v) >= M - 1e-9; });
      };
      if (at_edge(r.argmax_u) || at_edge(r.argmax_r)) hit[rep] = 1;
      if (!r.converged) warn[rep] = 1;
      if (j == 0) {
        for (int g = 0; g < ns.G; ++g)
          if (roles[static_cast<std::size_t>(g)] == GroupRole::Tied) out.restricted_argmax[rep] = r.argmax_r[static_cast<std::size_t>(g)];
      }
    }
    out.draws[rep] = total;
  });
  out.boundary_hits = std::count(hit.begin(), hit.end(), 1);
  out.convergence_warnings = std::count(warn.begin(), warn.end(), 1);
  out.floored_draws = std::count(floored.begin(), floored.end(), 1);
  finalize_sample(out, opt.levels);
  if (out.convergence_warnings > 0)
    out.warnings.push_back("particle swarm restarts disagreed on the optimum in " + std::to_string(out.convergence_warnings) +
                           " of " + std::to_string(out.draws.size()) + " replications");
  return out;
}

}  // namespace multibreak
