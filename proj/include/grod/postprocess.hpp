#pragma once

// Inference-time post-processing: logit adjustment, scoring functions and the
// threshold of the score-based classifier. Every score is "higher = more ID".

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "grod/numerics.hpp"
#include "grod/transformer.hpp"

namespace grod {

/// Maps K+1 raw logits to a distribution over the K ID classes: uniform when the
/// extra OOD logit is the argmax, softmax of the first K logits otherwise.
inline Vector adjust_logits(const Vector& raw) {
  const Eigen::Index k = raw.size() - 1;
  if (k < 1) throw Error(ErrorKind::DimensionMismatch, "adjust_logits needs K+1 >= 2 entries");
  if (classify_max(raw) == static_cast<int>(raw.size())) {
    return Vector::Constant(k, 1.0 / static_cast<double>(k));
  }
  return softmax(raw.head(k));
}

inline Matrix adjust_logits_rows(const Matrix& raw) {
  Matrix out(raw.rows(), raw.cols() - 1);
  for (Eigen::Index r = 0; r < raw.rows(); ++r) out.row(r) = adjust_logits(raw.row(r).transpose()).transpose();
  return out;
}

inline double msp_score(const Vector& adjusted) { return adjusted.maxCoeff(); }

/// T * logsumexp(logits / T).
inline double energy_score(const Vector& logits, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::DimensionMismatch, "temperature must be > 0");
  return temperature * logsumexp(logits / temperature);
}

struct VimCalibration {
  Matrix principal_basis;  // s x d', orthonormal columns
  Vector feature_mean;
  double alpha = 1.0;
};

/// Norm of the part of (x - mean) outside the principal subspace.
inline double vim_residual(const Vector& x, const VimCalibration& calib) {
  const Vector centered = x - calib.feature_mean;
  if (calib.principal_basis.cols() == 0) return centered.norm();
  return (centered - calib.principal_basis * (calib.principal_basis.transpose() * centered)).norm();
}

/// Principal subspace of the calibration features, and
/// alpha = sum(max logit) / sum(residual) over the calibration set.
inline VimCalibration vim_calibrate(const Matrix& features, const Matrix& logits, Eigen::Index d_prime) {
  if (features.rows() != logits.rows()) {
    throw Error(ErrorKind::LengthMismatch, "vim_calibrate features/logits rows differ");
  }
  if (d_prime < 0 || d_prime > features.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "vim_calibrate subspace dimension out of range");
  }
  if (features.rows() < d_prime + 1 || features.rows() < 2) {
    throw Error(ErrorKind::TooFewSamples, "vim_calibrate needs at least d'+1 samples");
  }
  VimCalibration calib;
  calib.feature_mean = column_mean(features);
  const Eigen::Index s = features.cols();
  calib.principal_basis.resize(s, d_prime);
  if (d_prime > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sample_covariance(features));
    for (Eigen::Index j = 0; j < d_prime; ++j) {
      calib.principal_basis.col(j) = solver.eigenvectors().col(s - 1 - j);
    }
  }
  double residual_sum = 0.0;
  double logit_sum = 0.0;
  double scale = 0.0;
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    residual_sum += vim_residual(features.row(r).transpose(), calib);
    logit_sum += logits.row(r).maxCoeff();
    scale = std::max(scale, (features.row(r).transpose() - calib.feature_mean).norm());
  }
  if (!(residual_sum > 1e-12 * std::max(1.0, scale) * static_cast<double>(features.rows()))) {
    throw Error(ErrorKind::DegenerateFeatures, "features have no residual outside the principal subspace");
  }
  calib.alpha = logit_sum / residual_sum;
  if (!(calib.alpha > 0.0) || !std::isfinite(calib.alpha)) {
    throw Error(ErrorKind::DegenerateFeatures, "non-positive VIM scale");
  }
  return calib;
}

/// logsumexp(adjusted logits) - alpha * residual(x).
inline double vim_score(const Vector& x, const Vector& adjusted, const VimCalibration& calib) {
  return logsumexp(adjusted) - calib.alpha * vim_residual(x, calib);
}

/// Subspace size: s / 2 for small feature spaces, otherwise min(s - 1, 64).
inline Eigen::Index default_vim_dim(Eigen::Index s) {
  if (s <= 16) return std::max<Eigen::Index>(1, s / 2);
  return std::min<Eigen::Index>(s - 1, 64);
}

/// Lower-interpolated (1 - tpr) quantile of the ID scores, so at least a
/// fraction tpr of them is >= the returned threshold.
inline double pick_threshold(std::span<const double> id_scores, double tpr = 0.95) {
  if (id_scores.empty()) throw Error(ErrorKind::EmptyClass, "pick_threshold on empty scores");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = (1.0 - tpr) * static_cast<double>(sorted.size() - 1);
  auto idx = static_cast<std::size_t>(std::floor(pos + 1e-9));
  idx = std::min(idx, sorted.size() - 1);
  return sorted[idx];
}

enum class Scorer { Msp, Energy, Vim };

inline Scorer parse_scorer(std::string_view name) {
  if (name == "msp") return Scorer::Msp;
  if (name == "energy") return Scorer::Energy;
  if (name == "vim") return Scorer::Vim;
  throw Error(ErrorKind::ConfigError, "unknown scorer '" + std::string(name) + "'");
}

inline std::string_view scorer_name(Scorer s) {
  switch (s) {
    case Scorer::Msp: return "msp";
    case Scorer::Energy: return "energy";
    case Scorer::Vim: return "vim";
  }
  return "msp";
}

struct ScoreReport {
  std::vector<double> scores;
  Matrix adjusted_logits;
  std::vector<int> predictions;  // 1..K+1
  double threshold = 0.0;
};

/// Scores every row from its feature vector and adjusted logits. calib is only read
/// for the VIM scorer.
inline std::vector<double> score_rows(Scorer scorer, const Matrix& features, const Matrix& adjusted,
                                      const VimCalibration* calib, double temperature = 1.0) {
  std::vector<double> out(static_cast<std::size_t>(adjusted.rows()));
  for (Eigen::Index r = 0; r < adjusted.rows(); ++r) {
    const Vector row = adjusted.row(r).transpose();
    double s = 0.0;
    switch (scorer) {
      case Scorer::Msp: s = msp_score(row); break;
      case Scorer::Energy: s = energy_score(row, temperature); break;
      case Scorer::Vim:
        if (calib == nullptr) throw Error(ErrorKind::UninitializedState, "VIM scorer without calibration");
        s = vim_score(features.row(r).transpose(), row, *calib);
        break;
    }
    out[static_cast<std::size_t>(r)] = s;
  }
  return out;
}

/// Score-based classifier over raw logits: K+1 below the threshold, otherwise
/// the argmax among the K ID logits.
inline ScoreReport make_score_report(const Matrix& raw_logits, const Matrix& adjusted,
                                     std::vector<double> scores, double threshold) {
  ScoreReport rep;
  rep.scores = std::move(scores);
  rep.adjusted_logits = adjusted;
  rep.threshold = threshold;
  const auto k = raw_logits.cols() - 1;
  rep.predictions.reserve(rep.scores.size());
  for (Eigen::Index r = 0; r < raw_logits.rows(); ++r) {
    const double score = rep.scores[static_cast<std::size_t>(r)];
    rep.predictions.push_back(score < threshold ? static_cast<int>(k + 1)
                                                : classify_max(raw_logits.row(r).head(k).transpose()));
  }
  return rep;
}

}  // namespace grod
