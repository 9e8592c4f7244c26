#pragma once

// Dense linear-algebra helpers shared by the outlier pipeline.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "grod/errors.hpp"

namespace grod {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Lower Cholesky factor of a symmetric positive definite matrix.
/// Throws NotPositiveDefinite when a pivot is not strictly positive.
inline Matrix cholesky_lower(const Matrix& a) {
  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) {
      throw Error(ErrorKind::NotPositiveDefinite,
                  "Cholesky pivot " + std::to_string(j) + " is " + std::to_string(diag));
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// Inverse of a lower-triangular matrix by forward substitution.
inline Matrix lower_triangular_inverse(const Matrix& l) {
  const Eigen::Index n = l.rows();
  Matrix inv = Matrix::Zero(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    inv(c, c) = 1.0 / l(c, c);
    for (Eigen::Index i = c + 1; i < n; ++i) {
      double s = 0.0;
      for (Eigen::Index k = c; k < i; ++k) s -= l(i, k) * inv(k, c);
      inv(i, c) = s / l(i, i);
    }
  }
  return inv;
}

/// (sigma + eps0 * I)^-1 through the Cholesky factor: with S' = L L^T the
/// inverse is (L^-1)^T L^-1. The input is symmetrized first.
inline Matrix regularized_inverse(const Matrix& sigma, double eps0 = 1e-4) {
  if (sigma.rows() != sigma.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "covariance must be square, got " + shape_of(sigma));
  }
  if (eps0 < 0.0) throw Error(ErrorKind::DimensionMismatch, "eps0 must be non-negative");
  Matrix reg = 0.5 * (sigma + sigma.transpose());
  reg.diagonal().array() += eps0;
  const Matrix l_inv = lower_triangular_inverse(cholesky_lower(reg));
  Matrix inv = l_inv.transpose() * l_inv;
  return 0.5 * (inv + inv.transpose());
}

/// Squared Mahalanobis form (x - mu) S^-1 (x - mu)^T, no square root.
inline double mahalanobis_sq(const Vector& x, const Vector& mu, const Matrix& sigma_inv) {
  if (x.size() != mu.size() || sigma_inv.rows() != x.size() || sigma_inv.cols() != x.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                "mahalanobis_sq: x=" + std::to_string(x.size()) + " mu=" +
                    std::to_string(mu.size()) + " inverse=" + shape_of(sigma_inv));
  }
  const Vector d = x - mu;
  return std::max(0.0, d.dot(sigma_inv * d));
}

inline Vector column_mean(const Matrix& rows) {
  if (rows.rows() == 0) throw Error(ErrorKind::EmptyInput, "mean of zero rows");
  return rows.colwise().mean().transpose();
}

/// Unbiased (n - 1) sample covariance of the rows of f.
inline Matrix sample_covariance(const Matrix& f) {
  if (f.rows() < 2) {
    throw Error(ErrorKind::TooFewSamples,
                "covariance needs at least 2 rows, got " + std::to_string(f.rows()));
  }
  const Eigen::RowVectorXd mean = f.colwise().mean();
  const Matrix centered = f.rowwise() - mean;
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(f.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

/// Covariance with the eps0 * I fallback used when a class has fewer than two rows.
inline Matrix covariance_or_regularizer(const Matrix& f, double eps0) {
  if (f.rows() < 2) return Matrix::Identity(f.cols(), f.cols()) * eps0;
  return sample_covariance(f);
}

inline double logsumexp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

inline Vector softmax(const Vector& v) {
  const Eigen::ArrayXd e = (v.array() - v.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

/// Softmax applied to every column independently, max-shifted per column.
inline Matrix column_softmax(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.col(c) = softmax(m.col(c));
  return out;
}

/// Gather the rows of f listed in idx.
template <typename IndexRange>
Matrix select_rows(const Matrix& f, const IndexRange& idx) {
  Matrix out(static_cast<Eigen::Index>(std::size(idx)), f.cols());
  Eigen::Index r = 0;
  for (auto i : idx) out.row(r++) = f.row(static_cast<Eigen::Index>(i));
  return out;
}

}  // namespace grod
