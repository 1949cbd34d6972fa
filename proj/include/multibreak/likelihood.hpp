#pragma once

// Gaussian quasi-likelihood and restricted iterated feasible GLS for a fixed
// segmentation.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "core.hpp"
#include "linalg.hpp"

namespace multibreak {

/// Cumulative cross products so any segment's moments cost O(1) to assemble.
class SegmentStatsCache {
 public:
  SegmentStatsCache() = default;
  explicit SegmentStatsCache(const RegressorPanel& panel) {
    const int T = panel.T(), n = panel.n(), q = panel.q();
    xx_.assign(static_cast<std::size_t>(T) + 1, Eigen::MatrixXd::Zero(q, q));
    yx_.assign(static_cast<std::size_t>(T) + 1, Eigen::MatrixXd::Zero(n, q));
    yy_.assign(static_cast<std::size_t>(T) + 1, Eigen::MatrixXd::Zero(n, n));
    for (int t = 1; t <= T; ++t) {
      const Eigen::VectorXd x = panel.design().row(t - 1).transpose();
      const Eigen::VectorXd y = panel.y().row(t - 1).transpose();
      const auto k = static_cast<std::size_t>(t);
      xx_[k] = xx_[k - 1] + x * x.transpose();
      yx_[k] = yx_[k - 1] + y * x.transpose();
      yy_[k] = yy_[k - 1] + y * y.transpose();
    }
  }

  int T() const { return static_cast<int>(xx_.size()) - 1; }

  /// Sums over observations first..last (1-based, inclusive).
  Eigen::MatrixXd xx(int first, int last) const { return at(xx_, last) - at(xx_, first - 1); }
  Eigen::MatrixXd yx(int first, int last) const { return at(yx_, last) - at(yx_, first - 1); }
  Eigen::MatrixXd yy(int first, int last) const { return at(yy_, last) - at(yy_, first - 1); }

 private:
  static const Eigen::MatrixXd& at(const std::vector<Eigen::MatrixXd>& v, int k) {
    return v[static_cast<std::size_t>(k)];
  }
  std::vector<Eigen::MatrixXd> xx_, yx_, yy_;
};

inline double log_2pi() { return std::log(2.0 * std::numbers::pi); }

/// log f(y | X, beta, Sigma) for one observation; `xrow` is X_t' (n x p).
inline double log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& xrow, const Eigen::VectorXd& beta,
                          const Eigen::MatrixXd& sigma) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success || !sigma.isApprox(sigma.transpose(), 1e-12))
    throw NumericalError("log_density: covariance matrix is not symmetric positive definite");
  const Eigen::VectorXd r = y - xrow * beta;
  const Eigen::VectorXd z = llt.matrixL().solve(r);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const auto n = static_cast<double>(y.size());
  return -0.5 * n * log_2pi() - 0.5 * logdet - 0.5 * z.squaredNorm();
}

struct FitOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;  ///< relative log-likelihood change
};

struct FitResult {
  Segmentation segmentation;
  ParamSet params;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  ///< log-likelihood after each iteration
  Eigen::MatrixXd residuals;  ///< T x n, row t-1 is u_t under the fitted regimes
};

namespace detail {
inline std::atomic<long long>& monotonicity_violations() {
  static std::atomic<long long> v{0};
  return v;
}
inline std::atomic<long long>& fits_checked() {
  static std::atomic<long long> v{0};
  return v;
}
}  // namespace detail

/// Number of iterated-GLS fits whose log-likelihood decreased at some
/// iteration, process-wide. Every fit checks its own trace.
inline long long fgls_monotonicity_violations() { return detail::monotonicity_violations().load(); }
inline long long fgls_fits_checked() { return detail::fits_checked().load(); }

/// Likelihood evaluator and restricted estimator bound to one panel/spec.
/// Immutable after construction; safe to share across threads.
class Model {
 public:
  Model(const RegressorPanel& panel, SystemSpec spec) : panel_(&panel), spec_(std::move(spec)), cache_(panel) {
    if (auto d = validate(spec_, panel); !d.empty())
      throw ConfigError("invalid model:\n" + format_diagnostics(d));
    for (int l = 0; l < spec_.p; ++l)
      for (Eigen::Index r = 0; r < spec_.S.rows(); ++r)
        if (spec_.S(r, l) != 0.0)
          nz_.push_back({static_cast<int>(r) / spec_.n, static_cast<int>(r) % spec_.n, l, spec_.S(r, l)});
    group_of_.resize(static_cast<std::size_t>(spec_.p));
    for (int l = 0; l < spec_.p; ++l) group_of_[static_cast<std::size_t>(l)] = spec_.group_of(l);
    build_restrictions();
  }

  const RegressorPanel& panel() const { return *panel_; }
  const SystemSpec& spec() const { return spec_; }
  const SegmentStatsCache& cache() const { return cache_; }
  int T() const { return panel_->T(); }
  int dim() const { return spec_.p * (spec_.breaks + 1); }
  /// Null-space basis of the restrictions (dim x free).
  const Eigen::MatrixXd& null_basis() const { return null_; }
  const Eigen::VectorXd& particular() const { return theta0_; }

  /// Coefficient matrix B (n x q) with X_t'beta = B x_t.
  Eigen::MatrixXd coef_matrix(const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(spec_.n, spec_.q);
    for (const auto& e : nz_) b(e.i, e.a) += e.val * beta(e.l);
    return b;
  }

  /// Active coefficients when group g is in regime group_regime[g].
  Eigen::VectorXd active_beta(const ParamSet& ps, const std::vector<int>& group_regime) const {
    Eigen::VectorXd b(spec_.p);
    for (int l = 0; l < spec_.p; ++l)
      b(l) = ps.beta[static_cast<std::size_t>(group_regime[static_cast<std::size_t>(group_of_[static_cast<std::size_t>(l)])])](l);
    return b;
  }

  /// X_t' (n x p) for observation t (1-based).
  Eigen::MatrixXd xrow(int t) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(spec_.n, spec_.p);
    for (const auto& e : nz_) out(e.i, e.l) += e.val * panel_->design()(t - 1, e.a);
    return out;
  }

  /// Quasi log-likelihood from cached segment moments.
  double loglik(const Segmentation& seg, const ParamSet& ps) const {
    const RegimeMap map = build_regime_map(spec_, seg, T());
    double acc = 0.0;
    for (const auto& piece : map.pieces) {
      const Eigen::MatrixXd& sigma = ps.sigma[static_cast<std::size_t>(piece.sigma_regime)];
      Eigen::LLT<Eigen::MatrixXd> llt(sigma);
      if (llt.info() != Eigen::Success) throw NumericalError("loglik: covariance matrix is not positive definite");
      const Eigen::MatrixXd u = piece_crossproduct(piece, coef_matrix(active_beta(ps, piece.group_regime)));
      const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      acc += piece.length() * logdet + llt.solve(u).trace();
    }
    return -0.5 * T() * spec_.n * log_2pi() - 0.5 * acc;
  }

  /// Restricted quasi-ML (or OLS-weighted) fit for a fixed segmentation.
  FitResult fit(const Segmentation& seg, const FitOptions& opt = {}) const {
    FitResult res = fit_map(build_regime_map(spec_, seg, T()), spec_.breaks + 1, null_, theta0_, seg, opt);
    res.segmentation = seg;
    return res;
  }

  /// Maximized log-likelihood of a single-regime model on observations
  /// first..last with all coefficients and the covariance free. Segment values
  /// add up to the pure structural change likelihood.
  double segment_loglik(int first, int last, const FitOptions& opt = {}) const {
    RegimeMap map;
    map.pieces.push_back({first, last, std::vector<int>(static_cast<std::size_t>(spec_.G()), 0), 0});
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(spec_.p, spec_.p);
    const Segmentation seg = Segmentation::common(spec_.G(), {});
    return fit_map(map, 1, id, Eigen::VectorXd::Zero(spec_.p), seg, opt, false).loglik;
  }

  /// Per-observation log densities: out(t-1, j) is the log density at t when
  /// every group listed in `moving` is in regime j and the remaining groups
  /// follow `fixed` (which may be null when all groups move).
  Eigen::MatrixXd pointwise_loglik(const ParamSet& ps, const std::vector<int>& moving,
                                   const Segmentation* fixed) const {
    const int m = spec_.breaks;
    const int T_ = T();
    Eigen::MatrixXd out(T_, m + 1);
    std::vector<char> is_moving(static_cast<std::size_t>(spec_.G()), 0);
    for (int g : moving) is_moving[static_cast<std::size_t>(g)] = 1;
    std::vector<int> reg(static_cast<std::size_t>(spec_.G()), 0);
    // cache keyed by regime vector would be overkill; regimes change at most G*m times
    for (int j = 0; j <= m; ++j) {
      std::vector<int> last_reg;
      Eigen::MatrixXd b, sinv;
      double logdet = 0.0;
      for (int t = 1; t <= T_; ++t) {
        for (int g = 0; g < spec_.G(); ++g) {
          if (is_moving[static_cast<std::size_t>(g)]) {
            reg[static_cast<std::size_t>(g)] = j;
          } else {
            const auto& d = fixed->dates(g);
            reg[static_cast<std::size_t>(g)] =
                static_cast<int>(std::count_if(d.begin(), d.end(), [&](int k) { return k < t; }));
          }
        }
        if (reg != last_reg) {
          last_reg = reg;
          b = coef_matrix(active_beta(ps, reg));
          const auto& s = ps.sigma[static_cast<std::size_t>(reg.back())];
          Eigen::LLT<Eigen::MatrixXd> llt(s);
          if (llt.info() != Eigen::Success) throw NumericalError("pointwise_loglik: covariance not positive definite");
          sinv = llt.solve(Eigen::MatrixXd::Identity(spec_.n, spec_.n));
          logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        }
        const Eigen::VectorXd r =
            panel_->y().row(t - 1).transpose() - b * panel_->design().row(t - 1).transpose();
        out(t - 1, j) = -0.5 * spec_.n * log_2pi() - 0.5 * logdet - 0.5 * r.dot(sinv * r);
      }
    }
    return out;
  }

 private:
  struct Nz {
    int a, i, l;
    double val;
  };

  int column(int l, const RegimePiece& piece) const {
    return piece.group_regime[static_cast<std::size_t>(group_of_[static_cast<std::size_t>(l)])] * spec_.p + l;
  }

  Eigen::VectorXd piece_beta(const Eigen::VectorXd& theta, const RegimePiece& piece) const {
    Eigen::VectorXd b(spec_.p);
    for (int l = 0; l < spec_.p; ++l) b(l) = theta(column(l, piece));
    return b;
  }

  /// sum over the piece of (y_t - B x_t)(y_t - B x_t)'
  Eigen::MatrixXd piece_crossproduct(const RegimePiece& piece, const Eigen::MatrixXd& b) const {
    const auto rows = Eigen::seq(piece.first - 1, piece.last - 1);
    const Eigen::MatrixXd u = panel_->y()(rows, Eigen::all) - panel_->design()(rows, Eigen::all) * b.transpose();
    return u.transpose() * u;
  }

  FitResult fit_map(const RegimeMap& map, int regimes, const Eigen::MatrixXd& null, const Eigen::VectorXd& theta0,
                    const Segmentation& seg, const FitOptions& opt, bool full_output = true) const {
    const int n = spec_.n;
    const auto R = static_cast<std::size_t>(regimes);
    const bool pooled = spec_.sigma_constant && regimes > 1;
    FitResult res;
    std::vector<Eigen::MatrixXd> sigma(R, Eigen::MatrixXd::Identity(n, n));
    Eigen::VectorXd theta;

    auto sigma_step = [&](const Eigen::VectorXd& th) {
      std::vector<Eigen::MatrixXd> acc(R, Eigen::MatrixXd::Zero(n, n));
      std::vector<int> len(R, 0);
      for (const auto& piece : map.pieces) {
        const auto s = static_cast<std::size_t>(pooled ? 0 : piece.sigma_regime);
        acc[s] += piece_crossproduct(piece, coef_matrix(piece_beta(th, piece)));
        len[s] += piece.length();
      }
      std::vector<Eigen::MatrixXd> out(R);
      for (std::size_t j = 0; j < R; ++j) {
        const std::size_t s = pooled ? 0 : j;
        Eigen::MatrixXd sj = linalg::symmetrize(acc[s] / len[s]);
        Eigen::LLT<Eigen::MatrixXd> llt(sj);
        const double mind = llt.info() == Eigen::Success ? llt.matrixL().toDenseMatrix().diagonal().minCoeff() : 0.0;
        if (llt.info() != Eigen::Success || mind * mind <= 1e-14 * std::max(sj.trace(), 1e-300)) {
          std::ostringstream os;
          os << "regularization failure: covariance estimate for regime " << j + 1 << " of " << seg.str()
             << " is not positive definite";
          throw NumericalError(os.str());
        }
        out[j] = sj;
      }
      return out;
    };

    auto eval = [&](const Eigen::VectorXd& th, const std::vector<Eigen::MatrixXd>& sg) {
      double acc = 0.0;
      int total = 0;
      for (const auto& piece : map.pieces) {
        Eigen::LLT<Eigen::MatrixXd> llt(sg[static_cast<std::size_t>(piece.sigma_regime)]);
        const Eigen::MatrixXd u = piece_crossproduct(piece, coef_matrix(piece_beta(th, piece)));
        acc += piece.length() * 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum() +
               llt.solve(u).trace();
        total += piece.length();
      }
      return -0.5 * total * n * log_2pi() - 0.5 * acc;
    };

    const int max_it = spec_.estimator == Estimator::Ols ? 1 : opt.max_iterations;
    double prev = -std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (int it = 0; it < max_it; ++it) {
      theta = gls_step(map, sigma, null, theta0, seg);
      sigma = sigma_step(theta);
      const double ll = eval(theta, sigma);
      res.trace.push_back(ll);
      res.iterations = it + 1;
      if (ll < prev - 1e-9 * std::max(1.0, std::abs(prev))) monotone = false;
      const bool done = std::abs(ll - prev) < opt.tolerance * std::max(1.0, std::abs(ll));
      prev = ll;
      if (done) {
        res.converged = true;
        break;
      }
    }
    if (spec_.estimator == Estimator::Ols) res.converged = true;
    ++detail::fits_checked();
    if (!monotone) ++detail::monotonicity_violations();

    res.loglik = prev;
    if (!full_output) return res;
    res.params.beta.resize(R);
    for (std::size_t j = 0; j < R; ++j)
      res.params.beta[j] = theta.segment(static_cast<Eigen::Index>(j) * spec_.p, spec_.p);
    res.params.sigma = sigma;
    res.residuals.resize(T(), n);
    for (const auto& piece : map.pieces) {
      const Eigen::MatrixXd b = coef_matrix(piece_beta(theta, piece));
      for (int t = piece.first; t <= piece.last; ++t)
        res.residuals.row(t - 1) = panel_->y().row(t - 1) - panel_->design().row(t - 1) * b.transpose();
    }
    return res;
  }

  Eigen::VectorXd gls_step(const RegimeMap& map, const std::vector<Eigen::MatrixXd>& sigma,
                           const Eigen::MatrixXd& null, const Eigen::VectorXd& theta0, const Segmentation& seg) const {
    const auto P = null.rows();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(P);
    const bool ols = spec_.estimator == Estimator::Ols;
    for (const auto& piece : map.pieces) {
      const Eigen::MatrixXd w =
          ols ? Eigen::MatrixXd::Identity(spec_.n, spec_.n)
              : Eigen::MatrixXd(sigma[static_cast<std::size_t>(piece.sigma_regime)].llt().solve(
                    Eigen::MatrixXd::Identity(spec_.n, spec_.n)));
      const Eigen::MatrixXd mxx = cache_.xx(piece.first, piece.last);
      const Eigen::MatrixXd wyx = w * cache_.yx(piece.first, piece.last);
      for (const auto& e : nz_) {
        const int c = column(e.l, piece);
        rhs(c) += e.val * wyx(e.i, e.a);
        for (const auto& f : nz_) H(c, column(f.l, piece)) += e.val * f.val * mxx(e.a, f.a) * w(e.i, f.i);
      }
    }
    const Eigen::MatrixXd hn = null.transpose() * H * null;
    const Eigen::VectorXd bn = null.transpose() * (rhs - H * theta0);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hn);
    const double scale = std::max(hn.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * scale) {
      const RegimePiece* shortest = &map.pieces.front();
      for (const auto& piece : map.pieces)
        if (piece.length() < shortest->length()) shortest = &piece;
      std::ostringstream os;
      os << "rank-deficient GLS normal equations for " << seg.str() << "; shortest sub-interval is "
         << shortest->first << ".." << shortest->last << " (" << shortest->length() << " observations)";
      throw NumericalError(os.str());
    }
    return theta0 + null * ldlt.solve(bn);
  }

  void build_restrictions() {
    const int P = dim();
    const auto r = static_cast<Eigen::Index>(spec_.restrictions.size());
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(r, P);
    Eigen::VectorXd c(r);
    for (Eigen::Index k = 0; k < r; ++k) {
      const auto& lr = spec_.restrictions[static_cast<std::size_t>(k)];
      for (const auto& [ref, w] : lr.terms) R(k, ref.regime * spec_.p + ref.coef) += w;
      c(k) = lr.rhs;
    }
    null_ = linalg::null_space(R);
    if (r == 0) {
      theta0_ = Eigen::VectorXd::Zero(P);
    } else {
      theta0_ = R.completeOrthogonalDecomposition().solve(c);
      if ((R * theta0_ - c).norm() > 1e-8 * std::max(1.0, c.norm()))
        throw ConfigError("linear restrictions are inconsistent");
    }
    if (null_.cols() == 0) throw ConfigError("restrictions leave no free coefficients");
  }

  const RegressorPanel* panel_;
  SystemSpec spec_;
  SegmentStatsCache cache_;
  std::vector<Nz> nz_;
  std::vector<int> group_of_;
  Eigen::MatrixXd null_;
  Eigen::VectorXd theta0_;
};

}  // namespace multibreak
