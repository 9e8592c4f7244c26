#pragma once

// Synthetic datasets: the two-class 2-D Gaussian mixture with a separate OOD
// component (truncated at three standard deviations), and K-class isotropic
// clusters in s dimensions for feature-ingestion runs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "grod/feature_batch.hpp"
#include "grod/rng.hpp"

namespace grod {

/// Axis-aligned Gaussian: mean and the diagonal of its covariance (variances).
struct GaussianSpec {
  Vector mean;
  Vector variances;
  int count = 0;

  Matrix cov() const { return variances.asDiagonal(); }
  double max_std() const { return std::sqrt(variances.maxCoeff()); }
  /// Samples farther than this (Euclidean) from the mean are rejected.
  double radius() const { return 3.0 * max_std(); }
};

/// Rejection-sample `count` points from a component, each within its radius() of its mean.
inline Matrix sample_truncated(const GaussianSpec& component, int count, CounterRng& rng) {
  const Eigen::Index s = component.mean.size();
  const Vector stds = component.variances.cwiseSqrt();
  const double radius = component.radius();
  Matrix out(count, s);
  Vector x(s);
  for (int i = 0; i < count;) {
    for (Eigen::Index j = 0; j < s; ++j) x(j) = component.mean(j) + stds(j) * rng.normal();
    if ((x - component.mean).norm() <= radius) out.row(i++) = x.transpose();
  }
  return out;
}

struct AppendixCData {
  std::array<GaussianSpec, 2> id_components;
  GaussianSpec ood_component;
  FeatureBatch train;  // labels 1, 2
  FeatureBatch test;   // labels 1, 2
  FeatureBatch ood;    // labels 3
};

namespace detail {

inline FeatureBatch stack_components(const std::vector<Matrix>& parts, const std::vector<int>& labels,
                                     int classes) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.rows();
  FeatureBatch out;
  out.classes = classes;
  out.features.resize(n, parts.front().cols());
  out.labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index r = 0;
  for (std::size_t c = 0; c < parts.size(); ++c) {
    out.features.middleRows(r, parts[c].rows()) = parts[c];
    r += parts[c].rows();
    out.labels.insert(out.labels.end(), static_cast<std::size_t>(parts[c].rows()), labels[c]);
  }
  return out;
}

}  // namespace detail

/// Component parameters are drawn first (class 1, class 2, then OOD):
///   mu^i = (i/10) [|N|, |N|],    variance_j^i = (i/10)|N| + 0.1
///   mu^O = (1/2) [-|N|, -|N|],   variance_j^O = 0.2|N| + 0.1
/// then each (component, split) pair is sampled from its own stream.
inline AppendixCData gen_appendix_c(std::uint64_t seed, int train_per_component = 1000,
                                    int test_per_component = 500) {
  CounterRng params(seed, 0);
  AppendixCData data;
  for (int i = 1; i <= 2; ++i) {
    GaussianSpec& g = data.id_components[static_cast<std::size_t>(i - 1)];
    const double scale = i / 10.0;
    g.mean = Vector(2);
    g.mean << scale * std::abs(params.normal()), scale * std::abs(params.normal());
    g.variances = Vector(2);
    g.variances << scale * std::abs(params.normal()) + 0.1, scale * std::abs(params.normal()) + 0.1;
  }
  GaussianSpec& o = data.ood_component;
  o.mean = Vector(2);
  o.mean << -0.5 * std::abs(params.normal()), -0.5 * std::abs(params.normal());
  o.variances = Vector(2);
  o.variances << 0.2 * std::abs(params.normal()) + 0.1, 0.2 * std::abs(params.normal()) + 0.1;

  for (auto& g : data.id_components) g.count = train_per_component;
  o.count = test_per_component;

  auto draw = [seed](const GaussianSpec& g, int count, std::uint64_t stream) {
    CounterRng rng(seed, stream);
    return sample_truncated(g, count, rng);
  };
  data.train = detail::stack_components(
      {draw(data.id_components[0], train_per_component, 1), draw(data.id_components[1], train_per_component, 2)},
      {1, 2}, 2);
  data.test = detail::stack_components(
      {draw(data.id_components[0], test_per_component, 3), draw(data.id_components[1], test_per_component, 4)},
      {1, 2}, 2);
  data.ood = detail::stack_components({draw(o, test_per_component, 5)}, {3}, 2);
  return data;
}

/// Centers with minimum pairwise distance `separation`: scaled basis vectors
/// when classes <= dim, otherwise random directions rescaled to that minimum.
inline Matrix separated_centers(int classes, int dim, double separation, CounterRng& rng) {
  Matrix centers = Matrix::Zero(classes, dim);
  if (classes <= dim) {
    for (int k = 0; k < classes; ++k) centers(k, k) = separation / std::sqrt(2.0);
    return centers;
  }
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = rng.normal();
  double min_d = std::numeric_limits<double>::infinity();
  for (int a = 0; a < classes; ++a) {
    for (int b = a + 1; b < classes; ++b) min_d = std::min(min_d, (centers.row(a) - centers.row(b)).norm());
  }
  if (min_d > 0.0) centers *= separation / min_d;
  return centers;
}

/// K isotropic unit-variance clusters with labels 1..K.
inline FeatureBatch gen_feature_set(int classes, int dim, int n_per_class, double separation,
                                    std::uint64_t seed) {
  if (classes < 2 || dim < 2) {
    throw Error(ErrorKind::DimensionMismatch, "gen_feature_set needs K >= 2 and s >= 2");
  }
  CounterRng rng(seed, 0);
  const Matrix centers = separated_centers(classes, dim, separation, rng);
  FeatureBatch out;
  out.classes = classes;
  out.features.resize(static_cast<Eigen::Index>(classes) * n_per_class, dim);
  Eigen::Index r = 0;
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < n_per_class; ++i, ++r) {
      for (int j = 0; j < dim; ++j) out.features(r, j) = centers(k, j) + rng.normal();
      out.labels.push_back(k + 1);
    }
  }
  return out;
}

struct FeatureTask {
  FeatureBatch train;
  FeatureBatch test;
  FeatureBatch ood;  // labels K+1
};

/// K ID clusters plus one held-out OOD cluster, all mutually `separation` apart.
inline FeatureTask gen_feature_task(int classes, int dim, int train_per_class, int test_per_class,
                                    int ood_count, double separation, std::uint64_t seed) {
  if (classes < 2 || dim < 2) {
    throw Error(ErrorKind::DimensionMismatch, "gen_feature_task needs K >= 2 and s >= 2");
  }
  CounterRng center_rng(seed, 0);
  const Matrix centers = separated_centers(classes + 1, dim, separation, center_rng);
  auto draw = [&](int k, int count, std::uint64_t stream) {
    CounterRng rng(seed, stream);
    Matrix m(count, dim);
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < dim; ++j) m(i, j) = centers(k, j) + rng.normal();
    }
    return m;
  };
  std::vector<Matrix> train_parts, test_parts;
  std::vector<int> id_labels;
  for (int k = 0; k < classes; ++k) {
    train_parts.push_back(draw(k, train_per_class, 1 + 2 * static_cast<std::uint64_t>(k)));
    test_parts.push_back(draw(k, test_per_class, 2 + 2 * static_cast<std::uint64_t>(k)));
    id_labels.push_back(k + 1);
  }
  FeatureTask task;
  task.train = detail::stack_components(train_parts, id_labels, classes);
  task.test = detail::stack_components(test_parts, id_labels, classes);
  task.ood = detail::stack_components({draw(classes, ood_count, 1000)}, {classes + 1}, classes);
  return task;
}

}  // namespace grod
