#pragma once

// OOD evaluation metrics. ID is the positive class and higher scores mean
// "more ID". AUROC gives ties half credit; AUPR uses step interpolation over
// every distinct threshold (average precision).

#include <algorithm>
#include <span>
#include <vector>

#include "grod/errors.hpp"
#include "grod/postprocess.hpp"

namespace grod {

struct MetricSummary {
  double id_acc = 0.0;
  double fpr_at_95 = 0.0;
  double auroc = 0.0;
  double aupr_in = 0.0;
  double aupr_out = 0.0;
};

namespace detail {

inline void require_nonempty(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::EmptyClass, std::string(what) + " needs both classes");
}

}  // namespace detail

inline double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  detail::require_nonempty(id_scores, ood_scores, "auroc");
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end());
  double wins = 0.0;
  for (double s : id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(lo, ood.end(), s);
    wins += static_cast<double>(lo - ood.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(id_scores.size()) * static_cast<double>(ood.size()));
}

/// Fraction of OOD scores at or above the threshold that keeps `tpr` of the ID scores.
inline double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                         double tpr = 0.95) {
  detail::require_nonempty(id_scores, ood_scores, "fpr_at_tpr");
  const double threshold = pick_threshold(id_scores, tpr);
  const auto passed = std::count_if(ood_scores.begin(), ood_scores.end(),
                                    [threshold](double s) { return s >= threshold; });
  return static_cast<double>(passed) / static_cast<double>(ood_scores.size());
}

/// Average precision: sum over distinct thresholds (descending) of
/// (recall_t - recall_prev) * precision_t.
inline double aupr(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  detail::require_nonempty(pos_scores, neg_scores, "aupr");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(pos_scores.size() + neg_scores.size());
  for (double s : pos_scores) items.push_back({s, true});
  for (double s : neg_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

  const auto n_pos = static_cast<double>(pos_scores.size());
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tp_prev = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    const double t = items[i].score;
    while (i < items.size() && items[i].score == t) {
      (items[i].positive ? tp : fp) += 1;
      ++i;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (static_cast<double>(tp - tp_prev) / n_pos) * precision;
    tp_prev = tp;
  }
  return area;
}

inline double aupr_in(std::span<const double> id_scores, std::span<const double> ood_scores) {
  return aupr(id_scores, ood_scores);
}

inline double aupr_out(std::span<const double> id_scores, std::span<const double> ood_scores) {
  std::vector<double> neg_ood(ood_scores.size()), neg_id(id_scores.size());
  std::transform(ood_scores.begin(), ood_scores.end(), neg_ood.begin(), [](double s) { return -s; });
  std::transform(id_scores.begin(), id_scores.end(), neg_id.begin(), [](double s) { return -s; });
  return aupr(neg_ood, neg_id);
}

/// Fraction of correct predictions; with restricted_to_id only rows whose true
/// label is an ID class (<= classes) count.
inline double id_accuracy(std::span<const int> predicted, std::span<const int> truth, int classes,
                          bool restricted_to_id = true) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorKind::LengthMismatch, "id_accuracy: " + std::to_string(predicted.size()) + " vs " +
                                               std::to_string(truth.size()));
  }
  std::size_t total = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (restricted_to_id && truth[i] > classes) continue;
    ++total;
    if (predicted[i] == truth[i]) ++correct;
  }
  if (total == 0) throw Error(ErrorKind::EmptyClass, "id_accuracy without ID rows");
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline MetricSummary summarize(double id_acc, std::span<const double> id_scores,
                               std::span<const double> ood_scores) {
  MetricSummary m;
  m.id_acc = id_acc;
  m.fpr_at_95 = fpr_at_tpr(id_scores, ood_scores, 0.95);
  m.auroc = auroc(id_scores, ood_scores);
  m.aupr_in = aupr_in(id_scores, ood_scores);
  m.aupr_out = aupr_out(id_scores, ood_scores);
  return m;
}

}  // namespace grod
