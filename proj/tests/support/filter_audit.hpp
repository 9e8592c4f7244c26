#pragma once

// Post-hoc audit of the outlier pipeline on random labelled batches: every
// retained point is re-measured against the state the pipeline left behind.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "grod/grod.hpp"

namespace grod::oracle {

struct LabelledBatch {
  Matrix features;
  std::vector<int> labels;
  int classes = 0;
};

/// Anisotropic Gaussian clusters with random centers.
struct ClusterTask {
  Matrix centers;  // classes x dim
  Matrix scales;   // per-axis standard deviations

  ClusterTask(int classes, int dim, CounterRng& rng) : centers(classes, dim), scales(classes, dim) {
    for (Eigen::Index i = 0; i < centers.size(); ++i) {
      centers.data()[i] = 3.0 * rng.normal();
      scales.data()[i] = rng.uniform(0.2, 1.5);
    }
  }

  LabelledBatch draw(int rows, CounterRng& rng) const {
    const auto classes = static_cast<std::uint64_t>(centers.rows());
    LabelledBatch b;
    b.classes = static_cast<int>(classes);
    b.features.resize(rows, centers.cols());
    for (int r = 0; r < rows; ++r) {
      const auto c = static_cast<Eigen::Index>(rng.below(classes));
      for (Eigen::Index j = 0; j < centers.cols(); ++j) {
        b.features(r, j) = centers(c, j) + scales(c, j) * rng.normal();
      }
      b.labels.push_back(static_cast<int>(c) + 1);
    }
    return b;
  }
};

struct FilterAudit {
  int batches = 0;
  int batches_with_fakes = 0;
  std::size_t fakes = 0;
  double min_margin_slack = std::numeric_limits<double>::infinity();  // Dist_OOD - (1+Lambda) Dist_ID
  double max_center_offset_over_a = 0.0;
  double max_row_sum_error = 0.0;
  double min_soft_entry = std::numeric_limits<double>::infinity();
  long max_cap_excess = std::numeric_limits<long>::min();  // retained - cap
  std::vector<std::string> failures;

  bool passed() const { return failures.empty() && batches_with_fakes > 0; }
};

inline void audit_one(const AugmentedBatch& out, const GrodState& state, const GrodConfig& cfg, int batch_size,
                      int classes, FilterAudit& audit) {
  auto fail = [&](const std::string& what) {
    std::ostringstream os;
    os << "batch " << audit.batches << ": " << what;
    audit.failures.push_back(os.str());
  };
  const FakeOodBatch& fake = out.fake;
  const long excess = static_cast<long>(fake.size()) - static_cast<long>(retention_cap(batch_size, classes));
  audit.max_cap_excess = std::max(audit.max_cap_excess, excess);
  if (excess > 0) fail("retained " + std::to_string(fake.size()) + " over cap");

  for (const OodCenter& c : out.centers) {
    const double offset = (c.center - c.boundary_point).norm();
    audit.max_center_offset_over_a = std::max(audit.max_center_offset_over_a, offset / cfg.a);
    if (offset > cfg.a) fail("center offset " + std::to_string(offset) + " exceeds a");
  }

  const bool use_classes = out.selection.kappa > 0;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const Vector v = fake.points.row(static_cast<Eigen::Index>(i)).transpose();
    const OodDistance od = ood_distance(v, state, use_classes);
    const double ref =
        std::max(od.nearest_class ? state.stats(*od.nearest_class).dist_id : state.dist_id_pca, cfg.eps);
    const double slack = od.dist - (1.0 + fake.margin) * ref;
    audit.min_margin_slack = std::min(audit.min_margin_slack, slack);
    if (slack < 0.0) fail("retained point " + std::to_string(i) + " violates the distance inequality");

    const auto row = fake.soft_labels.row(static_cast<Eigen::Index>(i));
    const double err = std::abs(row.sum() - 1.0);
    audit.max_row_sum_error = std::max(audit.max_row_sum_error, err);
    audit.min_soft_entry = std::min(audit.min_soft_entry, row.minCoeff());
    if (err > 1e-8) fail("soft-label row " + std::to_string(i) + " sums to " + std::to_string(row.sum()));
    if (row.minCoeff() < 0.0) fail("negative soft label");
  }
  if (fake.size() > 0) ++audit.batches_with_fakes;
  audit.fakes += fake.size();
}

/// Each trial draws a fresh task (K in 2..6, s in 2..8, B in {16, 32, 64}),
/// warms the state on one batch, then audits the next.
inline FilterAudit audit_filter(int trials, std::uint64_t seed) {
  CounterRng rng(seed, 77);
  FilterAudit audit;
  for (int t = 0; t < trials; ++t) {
    const int classes = 2 + static_cast<int>(rng.below(5));
    const int dim = 2 + static_cast<int>(rng.below(7));
    const int batch_size = 16 << rng.below(3);
    GrodConfig cfg;
    cfg.warmup_batches = 1;
    cfg.a = rng.uniform(0.1, 2.0);
    const ClusterTask task(classes, dim, rng);
    const LabelledBatch warm = task.draw(batch_size, rng);
    const LabelledBatch batch = task.draw(batch_size, rng);
    GrodState state = make_state(classes, cfg);
    grod_augment_batch(warm.features, warm.labels, state, cfg, rng);
    const AugmentedBatch out = grod_augment_batch(batch.features, batch.labels, state, cfg, rng);
    audit_one(out, state, cfg, batch_size, classes, audit);
    ++audit.batches;
  }
  return audit;
}

}  // namespace grod::oracle
