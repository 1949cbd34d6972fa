#pragma once

// Null limit distribution of the common-breaks statistic under plug-in
// nuisance parameters, simulated on a grid of local break offsets.
//
// Each break j contributes sup_s CB^{(j)}(s) - sup_s CB^{(j)}(s*1) and the
// terms are independent across j, so the two suprema are taken break by
// break. s is measured in units where the normalized break magnitude is one;
// a date offset k - k_j corresponds to s = c_j (k - k_j).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"
#include "estimation.hpp"
#include "hac.hpp"
#include "likelihood.hpp"
#include "linalg.hpp"
#include "random.hpp"

namespace multibreak {

// ---------------------------------------------------------------------------
// Nuisance parameters

struct BreakNuisance {
  int date = 0;  ///< estimated break date (last observation of the pre regime)
  double lambda = 0.0;
  std::array<Eigen::MatrixXd, 2> Qzz;        ///< pre, post
  std::array<Eigen::VectorXd, 2> mu_z;       ///< pre, post
  Eigen::VectorXd phi;                       ///< one entry per trend column
  std::array<Eigen::MatrixXd, 2> omega_zeta;  ///< long-run variance of z (x) eta
  std::array<Eigen::MatrixXd, 2> omega_eta;   ///< long-run variance of vec(eta eta' - I)
  std::array<Eigen::MatrixXd, 2> sigma;
  std::vector<Eigen::VectorXd> delta;  ///< normalized break direction per group (length p)
  Eigen::MatrixXd upsilon;             ///< normalized covariance break
  double c = 0.0;                      ///< ||d beta||^2 + tr(d Sigma^2)
  bool hac_floored = false;
};

struct NuisanceSet {
  int n = 0, q = 0, p = 0, G = 0;
  Eigen::MatrixXd S;
  std::vector<RegressorKind> kinds;
  std::vector<int> powers;
  Eigen::MatrixXd omega_w;  ///< long-run variance of the integrated regressors' increments
  std::vector<BreakNuisance> breaks;

  int qz() const { return static_cast<int>(std::count(kinds.begin(), kinds.end(), RegressorKind::Stationary)); }
  int qw() const { return static_cast<int>(std::count(kinds.begin(), kinds.end(), RegressorKind::Integrated)); }
  /// Position of the constant among the stationary columns.
  int constant_z = 0;
};

/// Moments, long-run variances and normalized break directions around each
/// break date of `dates` (defaults to the fit's last-group dates), using the
/// parameter estimates of `fit`.
inline NuisanceSet plug_in_nuisance(const Model& model, const FitResult& fit, const HacConfig& hac = {},
                                    std::vector<int> dates = {}) {
  const SystemSpec& spec = model.spec();
  const RegressorPanel& panel = model.panel();
  const int T = panel.T(), n = spec.n, m = spec.breaks;
  if (m < 1) throw ConfigError("nuisance parameters need at least one break");
  if (dates.empty()) dates = fit.segmentation.dates(spec.G() - 1);
  NuisanceSet ns;
  ns.n = n;
  ns.q = spec.q;
  ns.p = spec.p;
  ns.G = spec.G();
  ns.S = spec.S;
  for (const auto& r : panel.regressors()) {
    ns.kinds.push_back(r.kind);
    ns.powers.push_back(r.power);
  }
  const std::vector<int> zcols = panel.columns_of(RegressorKind::Stationary);
  const std::vector<int> wcols = panel.columns_of(RegressorKind::Integrated);
  const std::vector<int> tcols = panel.columns_of(RegressorKind::Trend);
  const int cc = panel.constant_column();
  if (cc < 0) throw ConfigError("nuisance parameters need a constant regressor");
  ns.constant_z = static_cast<int>(std::find(zcols.begin(), zcols.end(), cc) - zcols.begin());
  const int qz = static_cast<int>(zcols.size());

  if (!wcols.empty()) {
    Eigen::MatrixXd dw(T - 1, static_cast<Eigen::Index>(wcols.size()));
    for (std::size_t c = 0; c < wcols.size(); ++c) {
      const Eigen::VectorXd& w = panel.regressors()[static_cast<std::size_t>(wcols[c])].values;
      dw.col(static_cast<Eigen::Index>(c)) = w.tail(T - 1) - w.head(T - 1);
    }
    ns.omega_w = long_run_variance(dw, hac).omega;
  } else {
    ns.omega_w.resize(0, 0);
  }

  // standardized residuals under the fitted covariance regimes
  const auto& sig_dates = fit.segmentation.dates(spec.G() - 1);
  Eigen::MatrixXd eta(T, n);
  {
    std::vector<Eigen::MatrixXd> isq;
    for (const auto& s : fit.params.sigma) isq.push_back(linalg::inv_sqrt_pd(s));
    for (int t = 1; t <= T; ++t) {
      const auto j = static_cast<std::size_t>(std::count_if(sig_dates.begin(), sig_dates.end(), [&](int k) { return k < t; }));
      eta.row(t - 1) = (isq[j] * fit.residuals.row(t - 1).transpose()).transpose();
    }
  }

  for (int j = 0; j < m; ++j) {
    BreakNuisance b;
    const int k = dates[static_cast<std::size_t>(j)];
    const int k0 = j == 0 ? 0 : dates[static_cast<std::size_t>(j - 1)];
    const int k2 = j + 1 < m ? dates[static_cast<std::size_t>(j + 1)] : T;
    b.date = k;
    b.lambda = static_cast<double>(k) / T;
    b.phi.resize(static_cast<Eigen::Index>(tcols.size()));
    for (std::size_t c = 0; c < tcols.size(); ++c)
      b.phi(static_cast<Eigen::Index>(c)) = std::pow(b.lambda, panel.regressors()[static_cast<std::size_t>(tcols[c])].power);
    const int first[2] = {k0 + 1, k + 1}, last[2] = {k, k2};
    for (int side = 0; side < 2; ++side) {
      const int a = first[side], len = last[side] - first[side] + 1;
      Eigen::MatrixXd z(len, qz);
      for (int c = 0; c < qz; ++c) z.col(c) = panel.design().col(zcols[static_cast<std::size_t>(c)]).segment(a - 1, len);
      b.Qzz[static_cast<std::size_t>(side)] = z.transpose() * z / len;
      b.mu_z[static_cast<std::size_t>(side)] = z.colwise().mean().transpose();
      Eigen::MatrixXd zeta(len, static_cast<Eigen::Index>(qz) * n), vv(len, static_cast<Eigen::Index>(n) * n);
      for (int t = 0; t < len; ++t) {
        const Eigen::VectorXd e = eta.row(a - 1 + t).transpose();
        for (int c = 0; c < qz; ++c) zeta.block(t, c * n, 1, n) = z(t, c) * e.transpose();
        const Eigen::MatrixXd ee = e * e.transpose() - Eigen::MatrixXd::Identity(n, n);
        vv.row(t) = linalg::vec(ee).transpose();
      }
      const auto lz = long_run_variance(zeta, hac);
      const auto le = long_run_variance(vv, hac);
      b.omega_zeta[static_cast<std::size_t>(side)] = lz.omega;
      b.omega_eta[static_cast<std::size_t>(side)] = le.omega;
      b.hac_floored = b.hac_floored || lz.floored || le.floored;
      b.sigma[static_cast<std::size_t>(side)] = fit.params.sigma[static_cast<std::size_t>(j + side)];
    }
    const Eigen::VectorXd dbeta = fit.params.beta[static_cast<std::size_t>(j + 1)] - fit.params.beta[static_cast<std::size_t>(j)];
    const Eigen::MatrixXd dsig = b.sigma[1] - b.sigma[0];
    b.c = dbeta.squaredNorm() + (dsig * dsig).trace();
    if (!(b.c > 1e-300))
      throw NumericalError("degenerate nuisance parameters: zero estimated break magnitude at break " + std::to_string(j + 1));
    const double sc = 1.0 / std::sqrt(b.c);
    for (int g = 0; g < spec.G(); ++g) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(spec.p);
      for (int l : spec.groups[static_cast<std::size_t>(g)]) d(l) = sc * dbeta(l);
      b.delta.push_back(d);
    }
    b.upsilon = sc * dsig;
    ns.breaks.push_back(std::move(b));
  }
  return ns;
}

// ---------------------------------------------------------------------------
// Simulation configuration and results

struct GridConfig {
  double M = 50.0;
  double step = 0.5;
  int points_per_side() const { return static_cast<int>(std::lround(M / step)); }
};

/// Role of each group in the tested hypothesis: tied groups share one local
/// offset under the null; free groups move independently in both suprema;
/// pinned groups stay at offset zero.
enum class GroupRole { Tied, Free, Pinned };

struct LimitOptions {
  int reps = 1000;
  GridConfig grid;
  std::uint64_t seed = 20240101;
  unsigned threads = 1;
  std::vector<double> levels{0.10, 0.05, 0.01};
  /// Use +(|s|/2)tr(Pi^2) for the covariance drift instead of the derived
  /// -(|s|/2)tr(Pi^2); see the note on eval_cb_term.
  bool variance_drift_as_printed = false;
  std::vector<GroupRole> roles;  ///< empty means every group tied
};

struct LimitSample {
  std::vector<double> draws;
  std::vector<double> restricted_argmax;  ///< common offset of break 1 per draw
  long long boundary_hits = 0;
  long long convergence_warnings = 0;
  long long floored_draws = 0;
  std::string backend;
  std::uint64_t seed = 0;
  std::vector<double> levels;
  std::vector<double> critical_values;
  std::vector<std::string> warnings;

  double boundary_fraction() const {
    return draws.empty() ? 0.0 : static_cast<double>(boundary_hits) / static_cast<double>(draws.size());
  }
};

/// Upper-alpha empirical quantile: the ceil((1-alpha) R)-th order statistic.
inline double upper_quantile(std::vector<double> x, double alpha) {
  if (x.empty()) throw Error("quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const auto R = static_cast<double>(x.size());
  auto idx = static_cast<long long>(std::ceil((1.0 - alpha) * R - 1e-9)) - 1;
  idx = std::clamp<long long>(idx, 0, static_cast<long long>(x.size()) - 1);
  return x[static_cast<std::size_t>(idx)];
}

/// (1 + #{draws >= statistic}) / (R + 1)
inline double pvalue(const LimitSample& sample, double statistic) {
  if (sample.draws.empty()) throw Error("pvalue: empty sample");
  const auto hits = std::count_if(sample.draws.begin(), sample.draws.end(), [&](double d) { return d >= statistic; });
  return (1.0 + static_cast<double>(hits)) / (static_cast<double>(sample.draws.size()) + 1.0);
}

inline void finalize_sample(LimitSample& s, const std::vector<double>& levels) {
  s.levels = levels;
  s.critical_values.clear();
  for (double a : levels) s.critical_values.push_back(upper_quantile(s.draws, a));
  if (s.boundary_fraction() > 0.01)
    s.warnings.push_back("argmax on the grid boundary in " + std::to_string(s.boundary_hits) + " of " +
                         std::to_string(s.draws.size()) + " draws; consider a larger grid half-width M");
}

// ---------------------------------------------------------------------------
// Draw-independent precomputation for one break


class BreakTables {
 public:
  BreakTables(const NuisanceSet& ns, int j, bool drift_as_printed) : ns_(&ns), j_(j) {
    const BreakNuisance& b = ns.breaks[static_cast<std::size_t>(j)];
    n = ns.n;
    q = ns.q;
    p = ns.p;
    G = ns.G;
    qz = ns.qz();
    nz = n * qz;
    nv = linalg::vech_size(n);
    for (int a = 0; a < q; ++a) {
      if (ns.kinds[static_cast<std::size_t>(a)] == RegressorKind::Stationary) zindex.push_back(static_cast<int>(zindex.size()));
      else zindex.push_back(-1);
    }
    for (int side = 0; side < 2; ++side) {
      const auto sd = static_cast<std::size_t>(side);
      sigma_inv[sd] = b.sigma[sd].inverse();
      sigma_half[sd] = linalg::sqrt_psd(b.sigma[sd]);
      L_zeta[sd] = factor(b.omega_zeta[sd], "z(x)eta");
      L_eta[sd] = factor(vech_block(b.omega_eta[sd]), "vec(eta eta')");
    }
    L_w = ns.qw() > 0 ? factor(b.lambda * ns.omega_w, "integrated increments") : Eigen::MatrixXd();

    // Pi for s <= 0 and s > 0
    const Eigen::MatrixXd isq0 = linalg::inv_sqrt_pd(b.sigma[0]), isq1 = linalg::inv_sqrt_pd(b.sigma[1]);
    Pi[0] = isq0 * b.upsilon * sigma_inv[1] * sigma_half[0];
    Pi[1] = -isq1 * b.upsilon * sigma_inv[0] * sigma_half[1];
    for (int side = 0; side < 2; ++side) {
      const auto sd = static_cast<std::size_t>(side);
      const double tr2 = (Pi[sd] * Pi[sd]).trace();
      drift[sd] = (drift_as_printed ? 0.5 : -0.5) * tr2;
      Eigen::VectorXd coef(nv);
      int k = 0;
      for (int c = 0; c < n; ++c)
        for (int r = c; r < n; ++r) coef(k++) = r == c ? Pi[sd](r, r) : Pi[sd](r, c) + Pi[sd](c, r);
      pi_load[sd] = L_eta[sd].transpose() * coef;
    }

    // c[g][k][side] = (I_q (x) Sigma_side^{1/2} Sigma_k^{-1}) S Delta_g
    nzS.clear();
    for (int l = 0; l < p; ++l)
      for (Eigen::Index r = 0; r < ns.S.rows(); ++r)
        if (ns.S(r, l) != 0.0) nzS.push_back({static_cast<int>(r) / n, static_cast<int>(r) % n, l, ns.S(r, l)});
    cvec.assign(static_cast<std::size_t>(G) * 4, Eigen::VectorXd());
    for (int g = 0; g < G; ++g) {
      Eigen::VectorXd sd_vec = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q) * n);
      for (const auto& e : nzS) sd_vec(e.a * n + e.i) += e.val * b.delta[static_cast<std::size_t>(g)](e.l);
      for (int k = 0; k < 2; ++k)
        for (int side = 0; side < 2; ++side) {
          const Eigen::MatrixXd A = sigma_half[static_cast<std::size_t>(side)] * sigma_inv[static_cast<std::size_t>(k)];
          Eigen::VectorXd c(static_cast<Eigen::Index>(q) * n);
          for (int a = 0; a < q; ++a) c.segment(a * n, n) = A * sd_vec.segment(a * n, n);
          cvec[idx(g, k, side)] = c;
        }
    }
  }

  int n = 0, q = 0, p = 0, G = 0, qz = 0, nz = 0, nv = 0;
  std::vector<int> zindex;
  std::array<Eigen::MatrixXd, 2> sigma_inv, sigma_half, L_zeta, L_eta, Pi;
  Eigen::MatrixXd L_w;
  std::array<double, 2> drift{};
  std::array<Eigen::VectorXd, 2> pi_load;  ///< pi(s) = pi_load . (standard BM in vech coordinates)
  struct Nz {
    int a, i, l;
    double val;
  };
  std::vector<Nz> nzS;
  std::vector<Eigen::VectorXd> cvec;

  static std::size_t idx(int g, int k, int side) { return static_cast<std::size_t>(g * 4 + k * 2 + side); }
  const BreakNuisance& nuisance() const { return ns_->breaks[static_cast<std::size_t>(j_)]; }
  const NuisanceSet& set() const { return *ns_; }
  int break_index() const { return j_; }

 private:
  Eigen::MatrixXd vech_block(const Eigen::MatrixXd& vecv) const {
    std::vector<int> sel;
    for (int c = 0; c < n; ++c)
      for (int r = c; r < n; ++r) sel.push_back(c * n + r);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(sel.size()), static_cast<Eigen::Index>(sel.size()));
    for (std::size_t a = 0; a < sel.size(); ++a)
      for (std::size_t b = 0; b < sel.size(); ++b)
        out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = vecv(sel[a], sel[b]);
    return out;
  }

  static Eigen::MatrixXd factor(const Eigen::MatrixXd& a, const char* what) {
    if (a.size() == 0) return a;
    const Eigen::MatrixXd s = linalg::symmetrize(a);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    const double tr = std::max(s.trace(), 0.0);
    if (!a.allFinite() || es.eigenvalues().minCoeff() < -1e-8 * std::max(tr, 1e-300)) {
      const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
      throw NumericalError(std::string("long-run variance of ") + what + " is not positive semidefinite (eigenvalues " +
                           std::to_string(lo) + " .. " + std::to_string(hi) + ")");
    }
    return linalg::sqrt_psd(s);
  }

  const NuisanceSet* ns_;
  int j_;
};

/// Quantities that depend on the draw of the integrated-regressor process
/// but not on the local offsets: break-term scalars and the loadings of each
/// projection on the standard Brownian motion behind z (x) eta.
struct DrawScalars {
  int G = 0;
  std::vector<double> b;                 ///< b[((k*2+side)*G+g)*G+h] = Delta_g' S'(D_side (x) Sigma_k^{-1}) S Delta_h
  std::vector<Eigen::VectorXd> load;     ///< load[idx(g,k,side)] . W_side(|s|) = a_{g,k}' V(s)

  double bval(int k, int side, int g, int h) const {
    return b[static_cast<std::size_t>(((k * 2 + side) * G + g) * G + h)];
  }
};

inline DrawScalars draw_scalars(const BreakTables& bt, const Eigen::VectorXd& vw) {
  const NuisanceSet& ns = bt.set();
  const BreakNuisance& nu = bt.nuisance();
  const int q = bt.q, n = bt.n, G = bt.G;
  DrawScalars ds;
  ds.G = G;
  // multiplier of V_eta for each non-stationary column
  std::vector<double> mult(static_cast<std::size_t>(q), 0.0);
  int ti = 0, wi = 0;
  for (int a = 0; a < q; ++a) {
    if (ns.kinds[static_cast<std::size_t>(a)] == RegressorKind::Trend) mult[static_cast<std::size_t>(a)] = nu.phi(ti++);
    if (ns.kinds[static_cast<std::size_t>(a)] == RegressorKind::Integrated) mult[static_cast<std::size_t>(a)] = vw(wi++);
  }
  ds.b.assign(static_cast<std::size_t>(4 * G * G), 0.0);
  for (int side = 0; side < 2; ++side) {
    const auto sd = static_cast<std::size_t>(side);
    Eigen::MatrixXd D(q, q);
    for (int a = 0; a < q; ++a)
      for (int c = 0; c < q; ++c) {
        const int za = bt.zindex[static_cast<std::size_t>(a)], zc = bt.zindex[static_cast<std::size_t>(c)];
        const double ma = mult[static_cast<std::size_t>(a)], mc = mult[static_cast<std::size_t>(c)];
        if (za >= 0 && zc >= 0) D(a, c) = nu.Qzz[sd](za, zc);
        else if (za >= 0) D(a, c) = nu.mu_z[sd](za) * mc;
        else if (zc >= 0) D(a, c) = ma * nu.mu_z[sd](zc);
        else D(a, c) = ma * mc;
      }
    for (int k = 0; k < 2; ++k) {
      const Eigen::MatrixXd& W = bt.sigma_inv[static_cast<std::size_t>(k)];
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(bt.p, bt.p);
      for (const auto& e : bt.nzS)
        for (const auto& f : bt.nzS) K(e.l, f.l) += e.val * f.val * D(e.a, f.a) * W(e.i, f.i);
      for (int g = 0; g < G; ++g)
        for (int h = 0; h < G; ++h)
          ds.b[static_cast<std::size_t>(((k * 2 + side) * G + g) * G + h)] =
              nu.delta[static_cast<std::size_t>(g)].dot(K * nu.delta[static_cast<std::size_t>(h)]);
    }
  }
  ds.load.resize(static_cast<std::size_t>(G) * 4);
  const int zc = ns.constant_z;
  for (int g = 0; g < G; ++g)
    for (int k = 0; k < 2; ++k)
      for (int side = 0; side < 2; ++side) {
        const Eigen::VectorXd& c = bt.cvec[BreakTables::idx(g, k, side)];
        Eigen::VectorXd e = Eigen::VectorXd::Zero(bt.nz);
        for (int a = 0; a < q; ++a) {
          const int za = bt.zindex[static_cast<std::size_t>(a)];
          if (za >= 0) e.segment(za * n, n) += c.segment(a * n, n);
          else e.segment(zc * n, n) += mult[static_cast<std::size_t>(a)] * c.segment(a * n, n);
        }
        ds.load[BreakTables::idx(g, k, side)] = bt.L_zeta[static_cast<std::size_t>(side)].transpose() * e;
      }
  return ds;
}

// ---------------------------------------------------------------------------
// Evaluation of CB^{(j)}
//
// Accessor concept (coordinate type X):
//   double s(X) const;                 local offset value
//   double pv(int g, int k, X) const;  Delta_g' S'(I (x) Sigma_k^{-1}) V(s)
//   double pi(X) const;                tr(Pi(s) V_etaeta(s))
//
// B(s, r) and W(s, r) weight each observation between the break and s by the
// covariance regime it falls in when the last group breaks at r: the pre
// regime for observations up to r, the post regime after r. For same-sign s
// and r this reproduces the closed form with the sgn(r)-weighted correction
// at argument r; for opposite signs no observation changes regime.
//
// The covariance drift term is -(|s|/2) tr(Pi^2). Expanding
// -(1/2)[log|Sigma_K| + eta' Sigma^{1/2} Sigma_K^{-1} Sigma^{1/2} eta] around the
// true regime to second order in the shrinking covariance break gives
// -(1/4) tr(Pi^2) per observation in mean, so twice the sum over |r| units
// is -(|s|/2) tr(Pi^2) after the change of variables. With the opposite sign
// the objective grows linearly in |s_G| and the suprema diverge.

template <class Acc>
class CbEvaluator {
 public:
  CbEvaluator(const BreakTables& bt, const DrawScalars& ds, const Acc& acc) : bt_(bt), ds_(ds), acc_(acc) {}

  using X = typename Acc::coord;

  /// Delta_g' W(s, r)
  double wterm(int g, X xs, X xr) const {
    const double s = acc_.s(xs), r = acc_.s(xr);
    if (s <= 0.0) {
      if (r <= s) return acc_.pv(g, 1, xs);
      if (r < 0.0) return acc_.pv(g, 0, xs) - acc_.pv(g, 0, xr) + acc_.pv(g, 1, xr);
      return acc_.pv(g, 0, xs);
    }
    if (r <= 0.0) return acc_.pv(g, 1, xs);
    if (r < s) return acc_.pv(g, 0, xr) + acc_.pv(g, 1, xs) - acc_.pv(g, 1, xr);
    return acc_.pv(g, 0, xs);
  }

  /// Delta_g' B(s, r) Delta_h
  double bterm(int g, int h, double s, double r) const {
    double pre, post;
    int side;
    if (s <= 0.0) {
      side = 0;
      if (r <= s) pre = 0.0, post = -s;
      else if (r < 0.0) pre = r - s, post = -r;
      else pre = -s, post = 0.0;
    } else {
      side = 1;
      if (r <= 0.0) pre = 0.0, post = s;
      else if (r < s) pre = r, post = s - r;
      else pre = s, post = 0.0;
    }
    return pre * ds_.bval(0, side, g, h) + post * ds_.bval(1, side, g, h);
  }

  /// Overlap term for the pair (g, h).
  double overlap(int g, int h, double sg, double sh, double r) const {
    if (sg <= 0.0 && sh <= 0.0) return bterm(g, h, std::max(sg, sh), r);
    if (sg > 0.0 && sh > 0.0) return bterm(g, h, std::min(sg, sh), r);
    return 0.0;
  }

  /// Terms depending only on the last group's offset.
  double C(X xr) const {
    const int L = bt_.G - 1;
    const double r = acc_.s(xr);
    const int side = r > 0.0 ? 1 : 0;
    return acc_.pi(xr) + bt_.drift[static_cast<std::size_t>(side)] * std::abs(r) - 2.0 * sgn(r) * wterm(L, xr, xr) -
           bterm(L, L, r, r);
  }

  /// Terms for group g < G-1 given the last group's offset.
  double E(int g, X xs, X xr) const {
    const int L = bt_.G - 1;
    const double s = acc_.s(xs), r = acc_.s(xr);
    return -2.0 * sgn(s) * wterm(g, xs, xr) - bterm(g, g, s, r) - 2.0 * overlap(g, L, s, r, r);
  }

  double cross(int g, int h, X xg, X xh, X xr) const {
    return 2.0 * overlap(g, h, acc_.s(xg), acc_.s(xh), acc_.s(xr));
  }

  /// CB^{(j)} at offsets x[0..G-1].
  double value(const std::vector<X>& x) const {
    const int L = bt_.G - 1;
    double v = C(x[static_cast<std::size_t>(L)]);
    for (int g = 0; g < L; ++g) v += E(g, x[static_cast<std::size_t>(g)], x[static_cast<std::size_t>(L)]);
    for (int g = 0; g < L; ++g)
      for (int h = g + 1; h < L; ++h)
        v -= cross(g, h, x[static_cast<std::size_t>(g)], x[static_cast<std::size_t>(h)], x[static_cast<std::size_t>(L)]);
    return v;
  }

  static double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

 private:
  const BreakTables& bt_;
  const DrawScalars& ds_;
  const Acc& acc_;
};

// ---------------------------------------------------------------------------
// Discretized processes on the grid s_i = (i - N) h, i = 0..2N

struct GridPaths {
  int N = 0;
  double h = 0.0;
  int G = 0;
  std::vector<double> pvals;  ///< pv[(g*2+k)*(2N+1) + i]
  std::vector<double> pis;

  using coord = int;
  double s(int i) const { return (i - N) * h; }
  double pv(int g, int k, int i) const {
    return pvals[static_cast<std::size_t>((g * 2 + k) * (2 * N + 1) + i)];
  }
  double pi(int i) const { return pis[static_cast<std::size_t>(i)]; }
};

/// Standard normal increments of one side: steps x dim, row-major by step.
inline std::vector<double> side_increments(std::uint64_t seed, std::uint64_t rep, std::uint32_t tag, int steps, int dim) {
  Stream st(seed, rep, tag);
  std::vector<double> z(static_cast<std::size_t>(steps) * static_cast<std::size_t>(dim));
  for (auto& v : z) v = st.normal();
  return z;
}

inline Eigen::VectorXd draw_vw(const BreakTables& bt, std::uint64_t seed, std::uint64_t rep) {
  if (bt.L_w.size() == 0) return Eigen::VectorXd();
  Stream st(seed, rep, tags::tag(tags::vw, bt.break_index()));
  Eigen::VectorXd z(bt.L_w.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = st.normal();
  return bt.L_w * z;
}

inline GridPaths realize_grid(const BreakTables& bt, const DrawScalars& ds, const GridConfig& grid, std::uint64_t seed,
                              std::uint64_t rep) {
  GridPaths gp;
  gp.N = grid.points_per_side();
  gp.h = grid.step;
  gp.G = bt.G;
  const int N = gp.N, W = 2 * N + 1, G = bt.G;
  const double rh = std::sqrt(grid.step);
  gp.pvals.assign(static_cast<std::size_t>(G) * 2 * static_cast<std::size_t>(W), 0.0);
  gp.pis.assign(static_cast<std::size_t>(W), 0.0);
  const int j = bt.break_index();
  for (int side = 0; side < 2; ++side) {
    const auto zz = side_increments(seed, rep, tags::tag(side == 0 ? tags::zeta_pre : tags::zeta_post, j), N, bt.nz);
    const auto ze = side_increments(seed, rep, tags::tag(side == 0 ? tags::eta_pre : tags::eta_post, j), N, bt.nv);
    const int dir = side == 0 ? -1 : 1;
    for (int g = 0; g < G; ++g)
      for (int k = 0; k < 2; ++k) {
        const Eigen::VectorXd& ld = ds.load[BreakTables::idx(g, k, side)];
        double acc = 0.0;
        for (int step = 1; step <= N; ++step) {
          const double* z = &zz[static_cast<std::size_t>(step - 1) * static_cast<std::size_t>(bt.nz)];
          double inc = 0.0;
          for (int c = 0; c < bt.nz; ++c) inc += ld(c) * z[c];
          acc += rh * inc;
          gp.pvals[static_cast<std::size_t>((g * 2 + k) * W + N + dir * step)] = acc;
        }
      }
    const Eigen::VectorXd& pl = bt.pi_load[static_cast<std::size_t>(side)];
    double acc = 0.0;
    for (int step = 1; step <= N; ++step) {
      const double* z = &ze[static_cast<std::size_t>(step - 1) * static_cast<std::size_t>(bt.nv)];
      double inc = 0.0;
      for (int c = 0; c < bt.nv; ++c) inc += pl(c) * z[c];
      acc += rh * inc;
      gp.pis[static_cast<std::size_t>(N + dir * step)] = acc;
    }
  }
  return gp;
}

struct GridMaxima {
  double unrestricted = -std::numeric_limits<double>::infinity();
  double restricted = -std::numeric_limits<double>::infinity();
  std::vector<int> argmax_u, argmax_r;
};

inline std::vector<GroupRole> resolve_roles(const std::vector<GroupRole>& roles, int G) {
  if (roles.empty()) return std::vector<GroupRole>(static_cast<std::size_t>(G), GroupRole::Tied);
  if (static_cast<int>(roles.size()) != G) throw ConfigError("group role list has the wrong length");
  return roles;
}

/// Grid suprema of CB^{(j)} over free offsets (unrestricted) and over offsets
/// that are common within the tied groups (restricted). Both evaluate every
/// tuple through the same decomposition, so the restricted maximum is one of
/// the unrestricted candidates.
inline GridMaxima grid_maxima(const BreakTables& bt, const DrawScalars& ds, const GridPaths& gp,
                              const std::vector<GroupRole>& roles) {
  const CbEvaluator<GridPaths> ev(bt, ds, gp);
  const int G = bt.G, L = G - 1, N = gp.N, W = 2 * N + 1;
  GridMaxima out;
  out.argmax_u.assign(static_cast<std::size_t>(G), N);
  out.argmax_r.assign(static_cast<std::size_t>(G), N);

  std::vector<int> movers;  // groups below L that move in the unrestricted problem
  for (int g = 0; g < L; ++g)
    if (roles[static_cast<std::size_t>(g)] != GroupRole::Pinned) movers.push_back(g);
  std::vector<std::vector<double>> E(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(W), 0.0));
  const bool last_pinned = roles[static_cast<std::size_t>(L)] == GroupRole::Pinned;
  const bool last_tied = roles[static_cast<std::size_t>(L)] == GroupRole::Tied;
  std::vector<int> tied_movers, free_movers;
  for (int g : movers) (roles[static_cast<std::size_t>(g)] == GroupRole::Tied ? tied_movers : free_movers).push_back(g);

  std::vector<int> idx(static_cast<std::size_t>(G), N);
  auto tuple_value = [&](double c, const std::vector<int>& x) {
    double v = c;
    for (int g = 0; g < L; ++g) v += E[static_cast<std::size_t>(g)][static_cast<std::size_t>(x[static_cast<std::size_t>(g)])];
    for (int g = 0; g < L; ++g)
      for (int h = g + 1; h < L; ++h)
        v -= ev.cross(g, h, x[static_cast<std::size_t>(g)], x[static_cast<std::size_t>(h)], x[static_cast<std::size_t>(L)]);
    return v;
  };
  // odometer over the listed groups; the others keep their values in x
  auto enumerate = [&](const std::vector<int>& vary, std::vector<int>& x, auto&& visit) {
    for (int g : vary) x[static_cast<std::size_t>(g)] = 0;
    while (true) {
      visit();
      std::size_t d = vary.size();
      while (d > 0) {
        --d;
        auto& xi = x[static_cast<std::size_t>(vary[d])];
        if (++xi < W) break;
        xi = 0;
        if (d == 0) return;
      }
      if (vary.empty()) return;
    }
  };

  const int r_lo = last_pinned ? N : 0, r_hi = last_pinned ? N : W - 1;
  for (int r = r_lo; r <= r_hi; ++r) {
    const double c = ev.C(r);
    for (int g : movers)
      for (int i = 0; i < W; ++i) E[static_cast<std::size_t>(g)][static_cast<std::size_t>(i)] = ev.E(g, i, r);
    std::fill(idx.begin(), idx.end(), N);
    idx[static_cast<std::size_t>(L)] = r;

    // unrestricted
    if (movers.size() <= 1) {
      int best_i = N;
      double best = -std::numeric_limits<double>::infinity();
      if (movers.empty()) {
        best = c;
      } else {
        const auto& e = E[static_cast<std::size_t>(movers[0])];
        for (int i = 0; i < W; ++i) {
          const double v = c + e[static_cast<std::size_t>(i)];
          if (v > best) best = v, best_i = i;
        }
      }
      if (best > out.unrestricted) {
        out.unrestricted = best;
        std::fill(out.argmax_u.begin(), out.argmax_u.end(), N);
        out.argmax_u[static_cast<std::size_t>(L)] = r;
        if (!movers.empty()) out.argmax_u[static_cast<std::size_t>(movers[0])] = best_i;
      }
    } else {
      std::vector<int> x = idx;
      enumerate(movers, x, [&] {
        const double v = tuple_value(c, x);
        if (v > out.unrestricted) out.unrestricted = v, out.argmax_u = x;
      });
    }

    // restricted: tuples with the tied coordinate equal to r when the last
    // group is tied, or with any common tied coordinate otherwise
    auto restricted_visit = [&](int t) {
      std::vector<int> x = idx;
      for (int g : tied_movers) x[static_cast<std::size_t>(g)] = t;
      enumerate(free_movers, x, [&] {
        const double v = movers.size() <= 1 && free_movers.empty() && !movers.empty()
                             ? c + E[static_cast<std::size_t>(movers[0])][static_cast<std::size_t>(x[static_cast<std::size_t>(movers[0])])]
                             : (movers.empty() ? c : tuple_value(c, x));
        if (v > out.restricted) out.restricted = v, out.argmax_r = x;
      });
    };
    if (last_tied) {
      restricted_visit(r);
    } else if (tied_movers.empty()) {
      restricted_visit(N);
    } else {
      for (int t = 0; t < W; ++t) restricted_visit(t);
    }
  }
  return out;
}

inline bool on_boundary(const std::vector<int>& x, int N) {
  return std::any_of(x.begin(), x.end(), [&](int i) { return i == 0 || i == 2 * N; });
}

/// Generic evaluation of CB^{(j)} at grid offsets via the accessor path; used
/// to cross-check the tabulated search.
inline double eval_cb_term(const BreakTables& bt, const DrawScalars& ds, const GridPaths& gp, const std::vector<int>& idx) {
  return CbEvaluator<GridPaths>(bt, ds, gp).value(idx);
}

/// Direct backend: Wiener paths on the grid, exhaustive grid suprema.
inline LimitSample simulate_direct(const NuisanceSet& ns, const LimitOptions& opt) {
  if (opt.reps < 100) throw ConfigError("limit simulation needs at least 100 replications");
  const auto roles = resolve_roles(opt.roles, ns.G);
  std::vector<BreakTables> tables;
  for (std::size_t j = 0; j < ns.breaks.size(); ++j)
    tables.emplace_back(ns, static_cast<int>(j), opt.variance_drift_as_printed);
  LimitSample out;
  out.backend = "direct";
  out.seed = opt.seed;
  out.draws.assign(static_cast<std::size_t>(opt.reps), 0.0);
  out.restricted_argmax.assign(static_cast<std::size_t>(opt.reps), 0.0);
  std::vector<char> hit(static_cast<std::size_t>(opt.reps), 0);
  const int N = opt.grid.points_per_side();
  if (N < 1) throw ConfigError("grid needs at least one step per side");
  parallel_for(static_cast<std::size_t>(opt.reps), opt.threads, [&](std::size_t rep) {
    double total = 0.0;
    bool boundary = false;
    for (std::size_t j = 0; j < tables.size(); ++j) {
      const auto& bt = tables[j];
      const DrawScalars ds = draw_scalars(bt, draw_vw(bt, opt.seed, rep));
      const GridPaths gp = realize_grid(bt, ds, opt.grid, opt.seed, rep);
      const GridMaxima gm = grid_maxima(bt, ds, gp, roles);
      if (!(gm.unrestricted >= gm.restricted)) throw NumericalError("grid nesting violated");
      total += gm.unrestricted - gm.restricted;
      boundary = boundary || on_boundary(gm.argmax_u, N) || on_boundary(gm.argmax_r, N);
      if (j == 0) {
        int t = N;
        for (int g = 0; g < ns.G; ++g)
          if (roles[static_cast<std::size_t>(g)] == GroupRole::Tied) t = gm.argmax_r[static_cast<std::size_t>(g)];
        out.restricted_argmax[rep] = gp.s(t);
      }
    }
    out.draws[rep] = total;
    hit[rep] = boundary ? 1 : 0;
  });
  out.boundary_hits = std::count(hit.begin(), hit.end(), 1);
  finalize_sample(out, opt.levels);
  return out;
}

// ---------------------------------------------------------------------------
// Break-date confidence intervals

enum class IntervalMethod { ArgmaxQuantiles, LikelihoodRatioInversion };

struct BreakInterval {
  int break_index = 0;
  int point = 0;
  int lower = 0;
  int upper = 0;
  double lower_offset = 0.0;  ///< real-valued k-hat - q_hi / c
  double upper_offset = 0.0;
  double level = 0.95;
  double c = 0.0;
  std::string method;
};

/// Simulated argmax of the common-offset limit process for break j when the
/// groups in `block` move together and all other groups stay at zero.
inline std::vector<double> simulate_common_argmax(const NuisanceSet& ns, int j, const std::vector<int>& block,
                                                  const LimitOptions& opt, std::vector<double>* sup_values = nullptr) {
  const BreakTables bt(ns, j, opt.variance_drift_as_printed);
  const int N = opt.grid.points_per_side(), W = 2 * N + 1, G = ns.G;
  std::vector<double> arg(static_cast<std::size_t>(opt.reps)), sups(static_cast<std::size_t>(opt.reps));
  std::vector<char> in_block(static_cast<std::size_t>(G), 0);
  for (int g : block) in_block[static_cast<std::size_t>(g)] = 1;
  parallel_for(static_cast<std::size_t>(opt.reps), opt.threads, [&](std::size_t rep) {
    const std::uint64_t r = rep + 0x9E3779B97F4A7C15ull;  // disjoint from the test's replications
    const DrawScalars ds = draw_scalars(bt, draw_vw(bt, opt.seed, r));
    const GridPaths gp = realize_grid(bt, ds, opt.grid, opt.seed, r);
    const CbEvaluator<GridPaths> ev(bt, ds, gp);
    std::vector<int> x(static_cast<std::size_t>(G), N);
    double best = -std::numeric_limits<double>::infinity();
    int bi = N;
    for (int i = 0; i < W; ++i) {
      for (int g = 0; g < G; ++g) x[static_cast<std::size_t>(g)] = in_block[static_cast<std::size_t>(g)] ? i : N;
      const double v = ev.value(x);
      if (v > best) best = v, bi = i;
    }
    arg[rep] = gp.s(bi);
    sups[rep] = best;
  });
  if (sup_values) *sup_values = std::move(sups);
  return arg;
}

inline double lower_quantile(std::vector<double> x, double a) {
  std::sort(x.begin(), x.end());
  auto idx = static_cast<long long>(std::floor(a * static_cast<double>(x.size())));
  idx = std::clamp<long long>(idx, 0, static_cast<long long>(x.size()) - 1);
  return x[static_cast<std::size_t>(idx)];
}

/// Interval for break j: quantiles of the simulated argmax s* map to dates
/// through k = k-hat - s / c, clipped to the admissible range.
inline BreakInterval break_confidence_interval(const Model& model, const FitResult& fit, const NuisanceSet& ns, int j,
                                               double alpha, const LimitOptions& opt,
                                               std::vector<int> block = {},
                                               IntervalMethod method = IntervalMethod::ArgmaxQuantiles) {
  if (j < 0 || j >= static_cast<int>(ns.breaks.size())) throw ConfigError("break index out of range");
  if (block.empty())
    for (int g = 0; g < ns.G; ++g) block.push_back(g);
  const BreakNuisance& b = ns.breaks[static_cast<std::size_t>(j)];
  const int T = model.T(), h = model.spec().min_spacing(T);
  BreakInterval out;
  out.break_index = j;
  out.point = b.date;
  out.level = 1.0 - alpha;
  out.c = b.c;
  std::vector<double> sups;
  const auto arg = simulate_common_argmax(ns, j, block, opt, &sups);
  if (method == IntervalMethod::ArgmaxQuantiles) {
    out.method = "argmax-quantiles";
    const double qlo = lower_quantile(arg, alpha / 2.0), qhi = upper_quantile(arg, alpha / 2.0);
    out.lower_offset = b.date - qhi / b.c;
    out.upper_offset = b.date - qlo / b.c;
    out.lower = static_cast<int>(std::floor(out.lower_offset + 1e-9));
    out.upper = static_cast<int>(std::ceil(out.upper_offset - 1e-9));
  } else {
    // invert the profile likelihood ratio in the break date with the other
    // dates held at their estimates; cutoff from the simulated sup
    out.method = "likelihood-ratio-inversion";
    const double cutoff = upper_quantile(sups, alpha);
    const double ll_hat = fit.loglik;
    int lo = b.date, hi = b.date;
    for (int k = h; k <= T - h; ++k) {
      auto d = fit.segmentation.all();
      for (int g : block) d[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)] = k;
      try {
        const FitResult f = model.fit(Segmentation(d));
        if (2.0 * (ll_hat - f.loglik) <= cutoff) lo = std::min(lo, k), hi = std::max(hi, k);
      } catch (const Error&) {
      }
    }
    out.lower = lo;
    out.upper = hi;
    out.lower_offset = lo;
    out.upper_offset = hi;
  }
  out.lower = std::clamp(out.lower, h, T - h);
  out.upper = std::clamp(out.upper, h, T - h);
  out.lower = std::min(out.lower, out.point);
  out.upper = std::max(out.upper, out.point);
  return out;
}

}  // namespace multibreak
