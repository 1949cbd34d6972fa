#pragma once

// Kernel-weighted long-run variance estimation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "core.hpp"
#include "linalg.hpp"

namespace multibreak {

enum class Kernel { Bartlett, QuadraticSpectral };

struct HacConfig {
  Kernel kernel = Kernel::Bartlett;
  std::optional<double> bandwidth;  ///< empty selects the Andrews AR(1) rule
  bool demean = true;
};

struct LongRunVariance {
  Eigen::MatrixXd omega;
  double bandwidth = 0.0;
  bool floored = false;  ///< negative eigenvalues were clipped
};

inline double kernel_weight(Kernel k, double x) {
  switch (k) {
    case Kernel::Bartlett:
      return std::abs(x) < 1.0 ? 1.0 - std::abs(x) : 0.0;
    case Kernel::QuadraticSpectral: {
      if (x == 0.0) return 1.0;
      const double z = 6.0 * std::numbers::pi * x / 5.0;
      return 25.0 / (12.0 * std::numbers::pi * std::numbers::pi * x * x) * (std::sin(z) / z - std::cos(z));
    }
  }
  return 0.0;
}

/// Andrews (1991) plug-in bandwidth from univariate AR(1) fits with equal
/// weights on every column.
inline double andrews_bandwidth(const Eigen::MatrixXd& u, Kernel k) {
  const auto T = static_cast<double>(u.rows());
  double num = 0.0, den = 0.0;
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    const Eigen::VectorXd x = u.col(c);
    const Eigen::VectorXd a = x.head(x.size() - 1), b = x.tail(x.size() - 1);
    const double aa = a.squaredNorm();
    if (aa <= 0.0) continue;
    double rho = a.dot(b) / aa;
    rho = std::clamp(rho, -0.97, 0.97);
    const double s2 = (b - rho * a).squaredNorm() / static_cast<double>(b.size());
    const double s4 = s2 * s2;
    if (k == Kernel::Bartlett) {
      num += 4.0 * rho * rho * s4 / (std::pow(1.0 - rho, 6) * std::pow(1.0 + rho, 2));
    } else {
      num += 4.0 * rho * rho * s4 / std::pow(1.0 - rho, 8);
    }
    den += s4 / std::pow(1.0 - rho, 4);
  }
  if (den <= 0.0) return 0.0;
  const double alpha = num / den;
  return k == Kernel::Bartlett ? 1.1447 * std::pow(alpha * T, 1.0 / 3.0) : 1.3221 * std::pow(alpha * T, 1.0 / 5.0);
}

/// Omega = Gamma_0 + sum_k w(k/b) (Gamma_k + Gamma_k'), symmetrized and
/// projected onto the PSD cone if needed.
inline LongRunVariance long_run_variance(const Eigen::MatrixXd& series, const HacConfig& cfg = {}) {
  const auto T = series.rows();
  if (T < 2) throw Error("long_run_variance: need at least two observations");
  Eigen::MatrixXd u = series;
  if (cfg.demean) u.rowwise() -= u.colwise().mean();
  LongRunVariance out;
  out.bandwidth = cfg.bandwidth ? *cfg.bandwidth : andrews_bandwidth(u, cfg.kernel);
  if (out.bandwidth < 0.0) throw ConfigError("long_run_variance: bandwidth must be non-negative");
  if (static_cast<double>(T) <= 2.0 * out.bandwidth)
    throw Error("long_run_variance: T = " + std::to_string(T) + " is not above twice the bandwidth " +
                std::to_string(out.bandwidth));
  const double Td = static_cast<double>(T);
  Eigen::MatrixXd omega = u.transpose() * u / Td;
  if (out.bandwidth > 0.0) {
    for (Eigen::Index k = 1; k < T; ++k) {
      const double w = kernel_weight(cfg.kernel, static_cast<double>(k) / out.bandwidth);
      if (cfg.kernel == Kernel::Bartlett && w == 0.0) break;
      if (w == 0.0) continue;
      const Eigen::MatrixXd g = u.bottomRows(T - k).transpose() * u.topRows(T - k) / Td;
      omega += w * (g + g.transpose());
    }
  }
  omega = linalg::symmetrize(omega);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
  // Gamma_0 alone is PSD by construction; leave it untouched
  if (out.bandwidth > 0.0 && es.eigenvalues().minCoeff() < 0.0) {
    out.floored = es.eigenvalues().minCoeff() < -1e-10 * std::max(omega.trace(), 0.0);
    omega = linalg::clip_psd(omega);
  }
  out.omega = omega;
  return out;
}

}  // namespace multibreak
