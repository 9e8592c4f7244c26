#pragma once

// Composite ID/OOD loss over (K+1)-way logits:
//   L = (1 - gamma) * L1 + gamma * L2
// L1 is cross-entropy against the full label vector, L2 the binary
// cross-entropy after collapsing classes 1..K into a single "ID" mass.

#include <cmath>
#include <vector>

#include "grod/numerics.hpp"

namespace grod {

inline constexpr double kLogClamp = 1e-12;

/// (sum of the first K entries, last entry).
inline Eigen::Vector2d collapse_id_ood(const Vector& v) {
  const Eigen::Index k = v.size() - 1;
  return {v.head(k).sum(), v(k)};
}

inline void check_label_logits(const Vector& y, const Vector& logits) {
  if (y.size() != logits.size() || y.size() < 2) {
    throw Error(ErrorKind::DimensionMismatch, "label/logit sizes " + std::to_string(y.size()) +
                                                  "/" + std::to_string(logits.size()));
  }
}

inline double loss_l1(const Vector& y, const Vector& logits) {
  check_label_logits(y, logits);
  const double lse = logsumexp(logits);
  return -(y.array() * (logits.array() - lse)).sum();
}

namespace detail {

struct BinaryParts {
  double log_id;   // log of the ID mass, clamped
  double log_ood;  // log of the OOD mass, clamped
  bool id_active;
  bool ood_active;
};

inline BinaryParts binary_parts(const Vector& logits) {
  const Eigen::Index k = logits.size() - 1;
  const double lse = logsumexp(logits);
  const double lse_id = logsumexp(logits.head(k));
  const double floor = std::log(kLogClamp);
  BinaryParts p{};
  p.log_id = lse_id - lse;
  p.log_ood = logits(k) - lse;
  p.id_active = p.log_id > floor;
  p.ood_active = p.log_ood > floor;
  if (!p.id_active) p.log_id = floor;
  if (!p.ood_active) p.log_ood = floor;
  return p;
}

}  // namespace detail

inline double loss_l2(const Vector& y, const Vector& logits) {
  check_label_logits(y, logits);
  const Eigen::Vector2d label = collapse_id_ood(y);
  const auto parts = detail::binary_parts(logits);
  return -(label(0) * parts.log_id + label(1) * parts.log_ood);
}

inline double loss_total(const Vector& y, const Vector& logits, double gamma) {
  return (1.0 - gamma) * loss_l1(y, logits) + gamma * loss_l2(y, logits);
}

/// d loss_total / d logits. Clamped log terms contribute no gradient.
inline Vector loss_grad_logits(const Vector& y, const Vector& logits, double gamma) {
  check_label_logits(y, logits);
  const Eigen::Index k = logits.size() - 1;
  const Vector p = softmax(logits);

  Vector grad = (1.0 - gamma) * (p * y.sum() - y);
  if (gamma == 0.0) return grad;

  const Eigen::Vector2d label = collapse_id_ood(y);
  const auto parts = detail::binary_parts(logits);
  const double q_id = std::exp(parts.log_id);
  const double q_ood = std::exp(parts.log_ood);
  Vector g2 = Vector::Zero(logits.size());
  if (parts.id_active) {
    // p_j / q_id for j <= K is the softmax over the ID logits alone.
    const Vector within = softmax(logits.head(k));
    g2.head(k) -= label(0) * (1.0 - q_id) * within;
    g2(k) += label(0) * q_ood;
  }
  if (parts.ood_active) {
    g2.head(k) += label(1) * p.head(k);
    g2(k) -= label(1) * (1.0 - q_ood);
  }
  return grad + gamma * g2;
}

inline Vector one_hot(int label, Eigen::Index outputs) {
  Vector v = Vector::Zero(outputs);
  v(label - 1) = 1.0;
  return v;
}

struct LossBreakdown {
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
};

/// Batch mean of each term; labels and logits are row-aligned (n x (K+1)).
inline LossBreakdown batch_loss(const Matrix& labels, const Matrix& logits, double gamma) {
  LossBreakdown out;
  const Eigen::Index n = labels.rows();
  if (n == 0) return out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector y = labels.row(i).transpose();
    const Vector z = logits.row(i).transpose();
    out.l1 += loss_l1(y, z);
    out.l2 += loss_l2(y, z);
  }
  out.l1 /= static_cast<double>(n);
  out.l2 /= static_cast<double>(n);
  out.total = (1.0 - gamma) * out.l1 + gamma * out.l2;
  return out;
}

}  // namespace grod
