#pragma once

// Small dense helpers shared by the estimation and simulation code.

#include <Eigen/Dense>

#include <cmath>

#include "core.hpp"

namespace multibreak::linalg {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& a) { return 0.5 * (a + a.transpose()); }

/// Symmetric square root with eigenvalues floored at floor_rel * trace.
inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& a, double floor_rel = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(a));
  const double fl = floor_rel * std::max(a.trace(), 0.0);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(fl).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Inverse symmetric square root; throws NumericalError if not PD.
inline Eigen::MatrixXd inv_sqrt_pd(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(a));
  if (es.eigenvalues().minCoeff() <= 0.0) throw NumericalError("covariance matrix is not positive definite");
  Eigen::VectorXd ev = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Project onto the PSD cone by clipping negative eigenvalues at zero.
inline Eigen::MatrixXd clip_psd(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(a));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Column-major vec.
inline Eigen::VectorXd vec(const Eigen::MatrixXd& a) {
  return Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
}

inline int vech_size(int n) { return n * (n + 1) / 2; }

/// Lower-triangular half-vectorization, column by column.
inline Eigen::VectorXd vech(const Eigen::MatrixXd& a) {
  const auto n = static_cast<int>(a.rows());
  Eigen::VectorXd out(vech_size(n));
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) out(k++) = a(i, j);
  return out;
}

inline Eigen::MatrixXd unvech(const Eigen::VectorXd& v, int n) {
  Eigen::MatrixXd out(n, n);
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) {
      out(i, j) = v(k);
      out(j, i) = v(k);
      ++k;
    }
  return out;
}

/// log-determinant of an SPD matrix via Cholesky; throws if not PD.
inline double logdet_pd(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Orthonormal basis of the null space of r (columns); empty if full column rank.
inline Eigen::MatrixXd null_space(const Eigen::MatrixXd& r) {
  const auto cols = r.cols();
  if (r.rows() == 0) return Eigen::MatrixXd::Identity(cols, cols);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r, Eigen::ComputeFullV);
  const double tol = 1e-10 * std::max<double>(1.0, svd.singularValues().size() ? svd.singularValues()(0) : 1.0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > tol) ++rank;
  return svd.matrixV().rightCols(cols - rank);
}

}  // namespace multibreak::linalg
