#pragma once

// PCA and per-class LDA projections, and selection of the batch rows that sit
// at the extremes of each projected axis.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <optional>
#include <vector>

#include "grod/feature_batch.hpp"
#include "grod/numerics.hpp"

namespace grod {

enum class ProjectionKind { PCA, LDA };

struct ProjectionBasis {
  ProjectionKind kind = ProjectionKind::PCA;
  Matrix axes;  // p x s, one axis per row
  Vector mean;
  std::optional<int> class_id;
  Vector eigenvalues;  // descending, one per axis
};

struct BoundarySet {
  Matrix points;  // rows copied verbatim from the input batch
  std::vector<std::size_t> rows;
  ProjectionKind source = ProjectionKind::PCA;
  std::optional<int> class_id;
};

namespace detail {

// First component with magnitude above tol is made positive.
template <typename Row>
void canonicalize_sign(Row&& axis, double tol = 1e-12) {
  for (Eigen::Index k = 0; k < axis.size(); ++k) {
    if (std::abs(axis(k)) > tol) {
      if (axis(k) < 0) axis *= -1.0;
      return;
    }
  }
}

}  // namespace detail

inline ProjectionBasis pca_fit(const Matrix& f, Eigen::Index p) {
  if (f.rows() < 2) {
    throw Error(ErrorKind::TooFewSamples, "pca_fit needs at least 2 rows");
  }
  if (p < 1 || p > std::min<Eigen::Index>(f.rows() - 1, f.cols())) {
    throw Error(ErrorKind::DimensionMismatch,
                "pca_fit axis count " + std::to_string(p) + " out of range for " + shape_of(f));
  }
  const Matrix cov = sample_covariance(f);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  const Eigen::Index s = f.cols();

  ProjectionBasis basis;
  basis.kind = ProjectionKind::PCA;
  basis.mean = column_mean(f);
  basis.axes.resize(p, s);
  basis.eigenvalues.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::Index src = s - 1 - j;  // solver returns ascending order
    basis.axes.row(j) = solver.eigenvectors().col(src).transpose().normalized();
    detail::canonicalize_sign(basis.axes.row(j));
    basis.eigenvalues(j) = solver.eigenvalues()(src);
  }
  return basis;
}

/// Fisher discriminant axes from between/within scatter, the within scatter
/// regularized by eps0 * I. Classes with fewer than two rows are left out of the
/// fit; one basis is returned per fitted class, in ascending label order.
inline std::vector<ProjectionBasis> lda_fit(const Matrix& f, const std::vector<int>& labels,
                                            Eigen::Index p, double eps0 = 1e-4) {
  if (static_cast<Eigen::Index>(labels.size()) != f.rows()) {
    throw Error(ErrorKind::LengthMismatch, "lda_fit labels/rows mismatch");
  }
  std::vector<int> present = labels;
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());

  std::vector<int> fitted;
  std::vector<Vector> means;
  std::vector<std::size_t> counts;
  for (int c : present) {
    const auto idx = rows_with_label(labels, c);
    if (idx.size() < 2) continue;
    fitted.push_back(c);
    means.push_back(column_mean(select_rows(f, idx)));
    counts.push_back(idx.size());
  }
  if (fitted.size() < 2) {
    throw Error(ErrorKind::TooFewSamples, "lda_fit needs two classes with at least 2 rows each");
  }
  const Eigen::Index s = f.cols();
  if (p < 1 || p > std::min<Eigen::Index>(static_cast<Eigen::Index>(fitted.size()) - 1, s)) {
    throw Error(ErrorKind::DimensionMismatch, "lda_fit axis count " + std::to_string(p) +
                                                  " exceeds classes-1 or dimension");
  }

  Vector overall = Vector::Zero(s);
  std::size_t total = 0;
  for (std::size_t c = 0; c < fitted.size(); ++c) {
    overall += means[c] * static_cast<double>(counts[c]);
    total += counts[c];
  }
  overall /= static_cast<double>(total);

  Matrix within = Matrix::Zero(s, s);
  Matrix between = Matrix::Zero(s, s);
  for (std::size_t c = 0; c < fitted.size(); ++c) {
    const Matrix rows = select_rows(f, rows_with_label(labels, fitted[c]));
    const Matrix centered = rows.rowwise() - means[c].transpose();
    within += centered.transpose() * centered;
    const Vector d = means[c] - overall;
    between += static_cast<double>(counts[c]) * d * d.transpose();
  }
  within = 0.5 * (within + within.transpose());
  within.diagonal().array() += eps0;
  between = 0.5 * (between + between.transpose());

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(between, within,
                                                          Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::DegenerateScatter, "within-class scatter not invertible");
  }

  Matrix axes(p, s);
  Vector values(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::Index src = s - 1 - j;
    Eigen::RowVectorXd axis = solver.eigenvectors().col(src).transpose();
    const double norm = axis.norm();
    if (!(norm > 0.0) || !axis.allFinite()) {
      throw Error(ErrorKind::DegenerateScatter, "degenerate discriminant axis");
    }
    axis /= norm;
    detail::canonicalize_sign(axis);
    axes.row(j) = axis;
    values(j) = solver.eigenvalues()(src);
  }

  std::vector<ProjectionBasis> out;
  out.reserve(fitted.size());
  for (std::size_t c = 0; c < fitted.size(); ++c) {
    ProjectionBasis b;
    b.kind = ProjectionKind::LDA;
    b.axes = axes;
    b.mean = means[c];
    b.class_id = fitted[c];
    b.eigenvalues = values;
    out.push_back(std::move(b));
  }
  return out;
}

/// Rows of f attaining the maximum and the minimum along every axis of the
/// basis (first occurrence on ties), duplicates removed. For an LDA basis the
/// caller passes only the rows of that basis's class.
inline BoundarySet mine_boundary(const Matrix& f, const ProjectionBasis& basis) {
  if (f.rows() == 0) throw Error(ErrorKind::EmptyInput, "mine_boundary on empty batch");
  if (f.cols() != basis.axes.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "mine_boundary: batch " + shape_of(f) +
                                                  " vs axes " + shape_of(basis.axes));
  }
  const Matrix projected = (f.rowwise() - basis.mean.transpose()) * basis.axes.transpose();

  std::vector<std::size_t> picked;
  auto add = [&picked](std::size_t r) {
    if (std::find(picked.begin(), picked.end(), r) == picked.end()) picked.push_back(r);
  };
  for (Eigen::Index j = 0; j < projected.cols(); ++j) {
    Eigen::Index hi = 0;
    Eigen::Index lo = 0;
    for (Eigen::Index r = 1; r < projected.rows(); ++r) {
      if (projected(r, j) > projected(hi, j)) hi = r;
      if (projected(r, j) < projected(lo, j)) lo = r;
    }
    add(static_cast<std::size_t>(hi));
    add(static_cast<std::size_t>(lo));
  }

  BoundarySet out;
  out.rows = picked;
  out.points = select_rows(f, picked);
  out.source = basis.kind;
  out.class_id = basis.class_id;
  return out;
}

}  // namespace grod
