#pragma once

#include <vector>

#include "grod/numerics.hpp"

namespace grod {

/// n x s features with hard labels in 1..classes (OOD rows may carry classes + 1).
struct FeatureBatch {
  Matrix features;
  std::vector<int> labels;
  int classes = 0;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  void check() const {
    if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
      throw Error(ErrorKind::LengthMismatch, "labels " + std::to_string(labels.size()) +
                                                 " vs rows " + std::to_string(features.rows()));
    }
  }
};

inline std::vector<std::size_t> rows_with_label(const std::vector<int>& labels, int label) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) idx.push_back(i);
  }
  return idx;
}

inline std::vector<int> label_counts(const std::vector<int>& labels, int classes) {
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (int y : labels) {
    if (y >= 1 && y <= classes) ++counts[static_cast<std::size_t>(y - 1)];
  }
  return counts;
}

}  // namespace grod
