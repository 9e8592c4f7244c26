#pragma once

// Feature-space outlier synthesis.
//
// Per training batch (after a warmup that only gathers statistics):
//   1. choose up to kappa classes with the most rows,
//   2. move the EMA centers / covariances / reference distances,
//   3. mine boundary rows on PCA axes (whole batch) and LDA axes (per chosen class),
//   4. push each boundary row outward by `a` away from its center,
//   5. sample Gaussian clouds N(center, a/3 I) around the pushed points,
//   6. drop candidates whose Mahalanobis distance is too ID-like, then
//      downsample to at most floor(B/K) + 2,
//   7. attach soft labels from the per-class distance ratios.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "grod/feature_batch.hpp"
#include "grod/loss.hpp"
#include "grod/numerics.hpp"
#include "grod/projections.hpp"
#include "grod/rng.hpp"

namespace grod {

struct GrodConfig {
  double a = 0.1;              // extension length
  double gamma = 0.1;          // weight of the binary ID/OOD loss
  double gamma_opt = 0.1;      // EMA rate for centers, covariances, distances
  int num = 0;                 // samples per cluster group; 0 = max(8, ceil(B/(kappa+1)))
  int warmup_batches = 5;
  double lambda_filter = 0.1;  // initial filter scale
  bool adapt_lambda = false;
  double eps = 1e-7;
  double eps0 = 1e-4;
  int pca_axes = 8;
  int lda_axes = 4;
  bool use_pca = true;
  bool use_lda = true;

  void validate() const {
    if (!(a > 0.0)) throw Error(ErrorKind::ConfigError, "grod.a must be > 0");
    if (gamma < 0.0 || gamma > 1.0) throw Error(ErrorKind::ConfigError, "grod.gamma must be in [0,1]");
    if (!(gamma_opt > 0.0) || gamma_opt > 1.0) {
      throw Error(ErrorKind::ConfigError, "grod.gamma_opt must be in (0,1]");
    }
    if (lambda_filter < 0.0) throw Error(ErrorKind::ConfigError, "grod.lambda must be >= 0");
    if (warmup_batches < 0 || num < 0 || pca_axes < 1 || lda_axes < 1) {
      throw Error(ErrorKind::ConfigError, "grod counts must be non-negative");
    }
  }

  bool generates_outliers() const { return use_pca || use_lda; }
};

struct ClassStats {
  bool ready = false;
  Vector mean;
  Matrix cov;
  Matrix cov_inv;
  double dist_id = 0.0;
};

struct GrodState {
  bool initialized = false;
  long batch_index = 0;
  int classes = 0;
  Vector mu_pca;
  Matrix cov_pca;
  Matrix cov_pca_inv;
  double dist_id_pca = 0.0;
  std::vector<ClassStats> per_class;  // index label - 1
  double lambda_filter = 0.1;
  Matrix warmup_pool;
  std::vector<int> warmup_labels;

  const ClassStats& stats(int label) const { return per_class.at(static_cast<std::size_t>(label - 1)); }
  ClassStats& stats(int label) { return per_class.at(static_cast<std::size_t>(label - 1)); }
};

inline GrodState make_state(int classes, const GrodConfig& config) {
  GrodState s;
  s.classes = classes;
  s.per_class.resize(static_cast<std::size_t>(classes));
  s.lambda_filter = config.lambda_filter;
  return s;
}

struct ClassSelection {
  int kappa = 0;
  std::vector<int> classes;  // labels, most populated first
};

/// kappa = min(|I_hat|, max(1, floor(2B/K))) over I_hat = {i : count_i > 1};
/// the kappa largest classes win, smaller label on ties.
inline ClassSelection select_classes(const std::vector<int>& counts, int batch_size, int classes) {
  std::vector<int> eligible;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 1) eligible.push_back(static_cast<int>(i) + 1);
  }
  const int cap = std::max(1, (2 * batch_size) / std::max(1, classes));
  ClassSelection sel;
  sel.kappa = std::min(static_cast<int>(eligible.size()), cap);
  std::stable_sort(eligible.begin(), eligible.end(), [&counts](int x, int y) {
    return counts[static_cast<std::size_t>(x - 1)] > counts[static_cast<std::size_t>(y - 1)];
  });
  sel.classes.assign(eligible.begin(), eligible.begin() + sel.kappa);
  return sel;
}

struct ReferenceDistances {
  double pca = 0.0;
  std::vector<std::optional<double>> per_class;  // empty when the class has no rows
};

/// Mean squared Mahalanobis distance of the batch to the global center and of
/// each class's rows to that class's center, under the state's covariances.
inline ReferenceDistances id_reference_distances(const Matrix& f, const std::vector<int>& labels,
                                                 const GrodState& state) {
  ReferenceDistances out;
  out.per_class.resize(state.per_class.size());
  if (f.rows() == 0) return out;
  double total = 0.0;
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    total += mahalanobis_sq(f.row(r).transpose(), state.mu_pca, state.cov_pca_inv);
  }
  out.pca = total / static_cast<double>(f.rows());
  for (int c = 1; c <= state.classes; ++c) {
    const ClassStats& cs = state.stats(c);
    if (!cs.ready) continue;
    const auto idx = rows_with_label(labels, c);
    if (idx.empty()) continue;
    double sum = 0.0;
    for (auto i : idx) {
      sum += mahalanobis_sq(f.row(static_cast<Eigen::Index>(i)).transpose(), cs.mean, cs.cov_inv);
    }
    out.per_class[static_cast<std::size_t>(c - 1)] = sum / static_cast<double>(idx.size());
  }
  return out;
}

namespace detail {

inline void refresh_inverses(GrodState& s, double eps0) {
  s.cov_pca_inv = regularized_inverse(s.cov_pca, eps0);
  for (auto& cs : s.per_class) {
    if (cs.ready) cs.cov_inv = regularized_inverse(cs.cov, eps0);
  }
}

}  // namespace detail

/// Seeds centers, covariances and reference distances from the warmup pool.
inline void initialize_state(GrodState& state, const Matrix& pool, const std::vector<int>& labels,
                             double eps0) {
  if (pool.rows() == 0) throw Error(ErrorKind::EmptyInput, "empty warmup pool");
  state.mu_pca = column_mean(pool);
  state.cov_pca = covariance_or_regularizer(pool, eps0);
  for (int c = 1; c <= state.classes; ++c) {
    const auto idx = rows_with_label(labels, c);
    if (idx.empty()) continue;
    const Matrix rows = select_rows(pool, idx);
    ClassStats& cs = state.stats(c);
    cs.ready = true;
    cs.mean = column_mean(rows);
    cs.cov = covariance_or_regularizer(rows, eps0);
  }
  detail::refresh_inverses(state, eps0);
  const ReferenceDistances ref = id_reference_distances(pool, labels, state);
  state.dist_id_pca = ref.pca;
  for (int c = 1; c <= state.classes; ++c) {
    if (ref.per_class[static_cast<std::size_t>(c - 1)]) {
      state.stats(c).dist_id = *ref.per_class[static_cast<std::size_t>(c - 1)];
    }
  }
  state.initialized = true;
}

/// x <- (1 - rate) x + rate * target, applied to the global center/covariance
/// and to every selected class; reference distances are then recomputed on the
/// batch under the updated statistics and folded in with the same rate.
/// A selected class seen for the first time is seeded from the batch directly.
inline void update_centers(GrodState& state, const Matrix& f, const std::vector<int>& labels,
                           const std::vector<int>& selected, double gamma_opt, double eps0 = 1e-4) {
  if (!state.initialized) {
    throw Error(ErrorKind::UninitializedState, "update_centers before warmup initialization");
  }
  const double keep = 1.0 - gamma_opt;
  state.mu_pca = keep * state.mu_pca + gamma_opt * column_mean(f);
  state.cov_pca = keep * state.cov_pca + gamma_opt * covariance_or_regularizer(f, eps0);

  std::vector<int> fresh;
  for (int c : selected) {
    const Matrix rows = select_rows(f, rows_with_label(labels, c));
    if (rows.rows() == 0) continue;
    ClassStats& cs = state.stats(c);
    const Vector mean = column_mean(rows);
    const Matrix cov = covariance_or_regularizer(rows, eps0);
    if (!cs.ready) {
      cs.ready = true;
      cs.mean = mean;
      cs.cov = cov;
      fresh.push_back(c);
    } else {
      cs.mean = keep * cs.mean + gamma_opt * mean;
      cs.cov = keep * cs.cov + gamma_opt * cov;
    }
  }
  detail::refresh_inverses(state, eps0);

  const ReferenceDistances ref = id_reference_distances(f, labels, state);
  state.dist_id_pca = keep * state.dist_id_pca + gamma_opt * ref.pca;
  for (int c : selected) {
    const auto& d = ref.per_class[static_cast<std::size_t>(c - 1)];
    if (!d) continue;
    ClassStats& cs = state.stats(c);
    const bool is_fresh = std::find(fresh.begin(), fresh.end(), c) != fresh.end();
    cs.dist_id = is_fresh ? *d : keep * cs.dist_id + gamma_opt * *d;
  }
}

struct Provenance {
  ProjectionKind kind = ProjectionKind::PCA;
  std::optional<int> class_id;

  bool operator==(const Provenance&) const = default;
};

struct OodCenter {
  Vector center;
  Vector boundary_point;
  Provenance provenance;
};

/// u = v + a (v - mu) / (||v - mu||_2 + eps), with mu the global center for PCA
/// boundary rows and the class center for LDA boundary rows.
inline std::vector<OodCenter> build_ood_centers(const std::vector<BoundarySet>& boundaries,
                                                const GrodState& state, double a, double eps = 1e-7) {
  std::vector<OodCenter> out;
  for (const BoundarySet& b : boundaries) {
    const Vector* mu = &state.mu_pca;
    if (b.source == ProjectionKind::LDA) {
      if (!b.class_id) throw Error(ErrorKind::EmptyInput, "LDA boundary without class");
      mu = &state.stats(*b.class_id).mean;
    }
    for (Eigen::Index r = 0; r < b.points.rows(); ++r) {
      const Vector v = b.points.row(r).transpose();
      const Vector dir = v - *mu;
      OodCenter c;
      c.boundary_point = v;
      c.center = v + a * dir / (dir.norm() + eps);
      c.provenance = {b.source, b.source == ProjectionKind::LDA ? b.class_id : std::nullopt};
      out.push_back(std::move(c));
    }
  }
  return out;
}

struct OodCandidates {
  Matrix points;
  std::vector<Provenance> provenance;
  std::vector<std::size_t> center_index;
};

/// For every provenance group (PCA, and each LDA class) emit `num` points,
/// cycling through that group's centers, each drawn from N(center, (a/3) I).
inline OodCandidates sample_fake_ood(const std::vector<OodCenter>& centers, double a, int num,
                                     CounterRng& rng) {
  if (centers.empty()) throw Error(ErrorKind::EmptyInput, "sample_fake_ood without centers");
  std::vector<Provenance> groups;
  for (const auto& c : centers) {
    if (std::find(groups.begin(), groups.end(), c.provenance) == groups.end()) {
      groups.push_back(c.provenance);
    }
  }
  const Eigen::Index s = centers.front().center.size();
  const double stddev = std::sqrt(a / 3.0);
  OodCandidates out;
  out.points.resize(static_cast<Eigen::Index>(groups.size()) * num, s);
  Eigen::Index r = 0;
  for (const Provenance& g : groups) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      if (centers[i].provenance == g) members.push_back(i);
    }
    for (int k = 0; k < num; ++k, ++r) {
      const std::size_t ci = members[static_cast<std::size_t>(k) % members.size()];
      for (Eigen::Index j = 0; j < s; ++j) {
        out.points(r, j) = centers[ci].center(j) + stddev * rng.normal();
      }
      out.provenance.push_back(g);
      out.center_index.push_back(ci);
    }
  }
  return out;
}

struct OodDistance {
  double dist = 0.0;
  std::optional<int> nearest_class;  // set iff the class branch is used
};

/// Distance to the global center when no classes are selected, otherwise the
/// minimum over every class with statistics, recording the argmin.
inline OodDistance ood_distance(const Vector& v, const GrodState& state, bool use_classes) {
  OodDistance out;
  if (!use_classes) {
    out.dist = mahalanobis_sq(v, state.mu_pca, state.cov_pca_inv);
    return out;
  }
  double best = std::numeric_limits<double>::infinity();
  for (int c = 1; c <= state.classes; ++c) {
    const ClassStats& cs = state.stats(c);
    if (!cs.ready) continue;
    const double d = mahalanobis_sq(v, cs.mean, cs.cov_inv);
    if (d < best) {
      best = d;
      out.nearest_class = c;
    }
  }
  if (!out.nearest_class) return ood_distance(v, state, false);
  out.dist = best;
  return out;
}

struct FakeOodBatch {
  Matrix points;
  Matrix soft_labels;  // rows in R^{K+1}
  std::vector<Provenance> provenance;
  std::vector<std::optional<int>> nearest_class;
  std::vector<double> dist_ood;
  std::vector<double> dist_id;  // reference distance each point was compared against
  double margin = 0.0;          // Lambda
  std::size_t candidates = 0;
  std::size_t survived_threshold = 0;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

inline std::size_t retention_cap(int batch_size, int classes) {
  return static_cast<std::size_t>(batch_size / std::max(1, classes) + 2);
}

/// Deletes candidates with Dist_OOD < (1 + Lambda) Dist_ID where
///   Lambda = lambda * (10 / N) * sum(Dist_OOD / Dist_ID - 1),
/// then keeps a uniformly random subset of at most floor(B/K) + 2.
/// Throws AllFiltered when nothing survives.
inline FakeOodBatch filter_fake_ood(const OodCandidates& candidates, const GrodState& state,
                                    double lambda_filter, int batch_size, int classes,
                                    bool use_classes, CounterRng& rng, double eps = 1e-7) {
  const auto n = static_cast<std::size_t>(candidates.points.rows());
  if (n == 0) throw Error(ErrorKind::EmptyInput, "filter_fake_ood without candidates");
  std::vector<double> d_ood(n), d_id(n);
  std::vector<std::optional<int>> nearest(n);
  double ratio_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const OodDistance od =
        ood_distance(candidates.points.row(static_cast<Eigen::Index>(i)).transpose(), state, use_classes);
    d_ood[i] = od.dist;
    nearest[i] = od.nearest_class;
    d_id[i] = std::max(od.nearest_class ? state.stats(*od.nearest_class).dist_id : state.dist_id_pca, eps);
    ratio_sum += d_ood[i] / d_id[i] - 1.0;
  }
  const double margin = lambda_filter * (10.0 / static_cast<double>(n)) * ratio_sum;

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(d_ood[i] < (1.0 + margin) * d_id[i])) kept.push_back(i);
  }
  const std::size_t survived = kept.size();
  if (kept.empty()) throw Error(ErrorKind::AllFiltered, "every fake OOD candidate was filtered");

  const std::size_t cap = retention_cap(batch_size, classes);
  if (kept.size() > cap) {
    const auto order = random_permutation(kept.size(), rng);
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < cap; ++i) chosen.push_back(kept[order[i]]);
    std::sort(chosen.begin(), chosen.end());
    kept = std::move(chosen);
  }

  FakeOodBatch out;
  out.points = select_rows(candidates.points, kept);
  for (auto i : kept) {
    out.provenance.push_back(candidates.provenance[i]);
    out.nearest_class.push_back(nearest[i]);
    out.dist_ood.push_back(d_ood[i]);
    out.dist_id.push_back(d_id[i]);
  }
  out.margin = margin;
  out.candidates = n;
  out.survived_threshold = survived;
  return out;
}

/// Row-normalized soft labels. With r_j = Dist_ID,j / Dist(v, mu_j, cov_j):
///   y_j = exp(r_j - 1) for j <= K,   y_{K+1} = exp(1 - max_j r_j).
/// Computed in log space; classes without statistics get zero mass.
inline Matrix soft_labels(const Matrix& points, const GrodState& state, int classes, double eps = 1e-7) {
  Matrix out(points.rows(), classes + 1);
  Vector logw(classes + 1);
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    const Vector v = points.row(r).transpose();
    double max_ratio = -std::numeric_limits<double>::infinity();
    for (int c = 1; c <= classes; ++c) {
      const ClassStats& cs = state.stats(c);
      if (!cs.ready) {
        logw(c - 1) = -std::numeric_limits<double>::infinity();
        continue;
      }
      const double ratio = cs.dist_id / std::max(mahalanobis_sq(v, cs.mean, cs.cov_inv), eps);
      logw(c - 1) = ratio - 1.0;
      max_ratio = std::max(max_ratio, ratio);
    }
    if (!std::isfinite(max_ratio)) {
      out.row(r) = one_hot(classes + 1, classes + 1).transpose();
      continue;
    }
    logw(classes) = 1.0 - max_ratio;
    // Eigen's vectorized exp clamps -inf to a denormal, so mask explicitly.
    Vector y = softmax(logw);
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      if (std::isinf(logw(j))) y(j) = 0.0;
    }
    out.row(r) = (y / y.sum()).transpose();
  }
  return out;
}

struct AugmentedBatch {
  Matrix features;  // ID rows first, then fake OOD rows
  Matrix labels;    // n_all x (K+1)
  Eigen::Index id_rows = 0;
  bool warmup = false;
  ClassSelection selection;
  std::vector<OodCenter> centers;
  FakeOodBatch fake;
};

inline int default_num(int batch_size, int kappa) {
  return std::max(8, (batch_size + kappa) / (kappa + 1));
}

namespace detail {

inline Matrix one_hot_rows(const std::vector<int>& labels, int outputs) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), outputs);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), labels[i] - 1) = 1.0;
  return y;
}

inline void adapt_lambda(GrodState& state, const std::vector<double>& ratios, double rate) {
  if (ratios.empty()) return;
  std::vector<double> sorted = ratios;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  double mean_excess = 0.0;
  for (double r : ratios) mean_excess += r - 1.0;
  mean_excess /= static_cast<double>(ratios.size());
  if (std::abs(mean_excess) < 1e-12) return;
  const double target = (median - 1.0) / (10.0 * mean_excess);
  if (std::isfinite(target) && target >= 0.0) {
    state.lambda_filter = (1.0 - rate) * state.lambda_filter + rate * target;
  }
}

}  // namespace detail

/// One batch of the fine-tuning stage. Warmup batches are returned unchanged
/// (hard labels only) while their rows are pooled; the pool seeds the state once
/// warmup ends. Afterwards fake OOD rows with soft labels are appended.
inline AugmentedBatch grod_augment_batch(const Matrix& f, const std::vector<int>& labels, GrodState& state,
                                         const GrodConfig& config, CounterRng& rng) {
  if (static_cast<Eigen::Index>(labels.size()) != f.rows()) {
    throw Error(ErrorKind::LengthMismatch, "batch labels/rows mismatch");
  }
  const int classes = state.classes;
  AugmentedBatch out;
  out.features = f;
  out.labels = detail::one_hot_rows(labels, classes + 1);
  out.id_rows = f.rows();

  if (state.batch_index < config.warmup_batches) {
    out.warmup = true;
    const Eigen::Index old = state.warmup_pool.rows();
    state.warmup_pool.conservativeResize(old + f.rows(), f.cols());
    state.warmup_pool.bottomRows(f.rows()) = f;
    state.warmup_labels.insert(state.warmup_labels.end(), labels.begin(), labels.end());
    ++state.batch_index;
    if (state.batch_index == config.warmup_batches) {
      initialize_state(state, state.warmup_pool, state.warmup_labels, config.eps0);
      state.warmup_pool.resize(0, 0);
      state.warmup_labels.clear();
    }
    return out;
  }
  if (!state.initialized) initialize_state(state, f, labels, config.eps0);
  ++state.batch_index;

  const int batch_size = static_cast<int>(f.rows());
  out.selection = select_classes(label_counts(labels, classes), batch_size, classes);
  update_centers(state, f, labels, out.selection.classes, config.gamma_opt, config.eps0);
  if (!config.generates_outliers()) return out;

  std::vector<BoundarySet> boundaries;
  if (config.use_pca && f.rows() >= 2) {
    const Eigen::Index p = std::min<Eigen::Index>({config.pca_axes, f.cols(), f.rows() - 1});
    boundaries.push_back(mine_boundary(f, pca_fit(f, p)));
  }
  if (config.use_lda && out.selection.kappa > 0) {
    const auto counts = label_counts(labels, classes);
    const auto fitted = std::count_if(counts.begin(), counts.end(), [](int c) { return c >= 2; });
    if (fitted >= 2) {
      const Eigen::Index p =
          std::min<Eigen::Index>({config.lda_axes, static_cast<Eigen::Index>(fitted) - 1, f.cols()});
      const auto bases = lda_fit(f, labels, p, config.eps0);
      for (const auto& basis : bases) {
        const int c = *basis.class_id;
        if (std::find(out.selection.classes.begin(), out.selection.classes.end(), c) ==
            out.selection.classes.end()) {
          continue;
        }
        boundaries.push_back(mine_boundary(select_rows(f, rows_with_label(labels, c)), basis));
      }
    }
  }
  if (boundaries.empty()) return out;

  out.centers = build_ood_centers(boundaries, state, config.a, config.eps);
  const int num = config.num > 0 ? config.num : default_num(batch_size, out.selection.kappa);
  const OodCandidates candidates = sample_fake_ood(out.centers, config.a, num, rng);
  const bool use_classes = out.selection.kappa > 0;

  FakeOodBatch fake;
  try {
    fake = filter_fake_ood(candidates, state, state.lambda_filter, batch_size, classes, use_classes, rng,
                           config.eps);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::AllFiltered) throw;
    return out;
  }
  if (config.adapt_lambda) {
    std::vector<double> ratios;
    for (Eigen::Index i = 0; i < candidates.points.rows(); ++i) {
      const OodDistance od = ood_distance(candidates.points.row(i).transpose(), state, use_classes);
      const double ref = od.nearest_class ? state.stats(*od.nearest_class).dist_id : state.dist_id_pca;
      ratios.push_back(od.dist / std::max(ref, config.eps));
    }
    detail::adapt_lambda(state, ratios, config.gamma_opt);
  }

  fake.soft_labels = use_classes ? soft_labels(fake.points, state, classes, config.eps)
                                 : Matrix(detail::one_hot_rows(std::vector<int>(fake.size(), classes + 1),
                                                               classes + 1));

  out.features.conservativeResize(f.rows() + fake.points.rows(), Eigen::NoChange);
  out.features.bottomRows(fake.points.rows()) = fake.points;
  out.labels.conservativeResize(f.rows() + fake.points.rows(), Eigen::NoChange);
  out.labels.bottomRows(fake.points.rows()) = fake.soft_labels;
  out.fake = std::move(fake);
  return out;
}

}  // namespace grod
