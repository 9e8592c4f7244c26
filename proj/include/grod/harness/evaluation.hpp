#pragma once

// Inference stage: raw logits -> adjusted logits -> scores -> threshold and
// metrics against each OOD set.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grod/checkpoint.hpp"
#include "grod/harness/training.hpp"
#include "grod/metrics.hpp"
#include "grod/postprocess.hpp"

namespace grod::harness {

/// Fits the VIM subspace on training features; empty for the other scorers.
inline std::optional<VimCalibration> calibrate_scorer(Scorer scorer, const TransformerModel& model,
                                                      const Matrix& train_rows, int vim_dim) {
  if (scorer != Scorer::Vim) return std::nullopt;
  const Inference inf = run_model(model, train_rows);
  const Eigen::Index s = inf.features.cols();
  const Eigen::Index d = vim_dim > 0 ? std::min<Eigen::Index>(vim_dim, s) : default_vim_dim(s);
  return vim_calibrate(inf.features, adjust_logits_rows(inf.logits), d);
}

inline void store_calibration(Checkpoint& ck, const std::optional<VimCalibration>& calib) {
  if (!calib) return;
  ck.extras["vim.basis"] = calib->principal_basis;
  ck.extras["vim.mean"] = calib->feature_mean;
  ck.set_scalar("vim.alpha", calib->alpha);
}

inline std::optional<VimCalibration> load_calibration(const Checkpoint& ck) {
  if (!ck.extras.contains("vim.basis")) return std::nullopt;
  VimCalibration c;
  c.principal_basis = ck.extra("vim.basis");
  c.feature_mean = ck.extra("vim.mean");
  c.alpha = ck.extra("vim.alpha")(0, 0);
  return c;
}

struct ScoredSet {
  std::vector<int> labels;
  ScoreReport report;
};

struct Evaluation {
  double id_acc = 0.0;
  double threshold = 0.0;
  ScoredSet id;
  std::map<std::string, ScoredSet> ood;
  std::map<std::string, MetricSummary> per_set;
  MetricSummary overall;  // mean of per_set
};

inline ScoreReport score_batch(const TransformerModel& model, const Matrix& rows, Scorer scorer,
                               const VimCalibration* calib, double temperature, double threshold) {
  const Inference inf = run_model(model, rows);
  const Matrix adjusted = adjust_logits_rows(inf.logits);
  auto scores = score_rows(scorer, inf.features, adjusted, calib, temperature);
  return make_score_report(inf.logits, adjusted, std::move(scores), threshold);
}

/// Scores the ID test rows (labels <= K) and each named OOD set; the threshold
/// keeps 95% of ID test scores. ID accuracy is the argmax over the K ID logits.
inline Evaluation evaluate(const TransformerModel& model, const FeatureBatch& test,
                           const std::map<std::string, FeatureBatch>& ood_sets, Scorer scorer,
                           const std::optional<VimCalibration>& calib, double temperature = 1.0) {
  const int k = model.classes;
  std::vector<std::size_t> id_rows;
  for (std::size_t i = 0; i < test.labels.size(); ++i) {
    if (test.labels[i] <= k) id_rows.push_back(i);
  }
  if (id_rows.empty()) throw Error(ErrorKind::EmptyClass, "evaluation set has no ID rows");
  const VimCalibration* cp = calib ? &*calib : nullptr;

  Evaluation ev;
  const Matrix id_features = select_rows(test.features, id_rows);
  for (auto i : id_rows) ev.id.labels.push_back(test.labels[i]);
  ev.id.report = score_batch(model, id_features, scorer, cp, temperature, 0.0);
  ev.threshold = pick_threshold(ev.id.report.scores, 0.95);
  ev.id.report = score_batch(model, id_features, scorer, cp, temperature, ev.threshold);
  ev.id_acc = argmax_accuracy(run_model(model, id_features).logits, ev.id.labels, k);

  for (const auto& [name, set] : ood_sets) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
      if (set.labels[i] > k) rows.push_back(i);
    }
    if (rows.empty()) throw Error(ErrorKind::EmptyClass, "OOD set '" + name + "' has no rows labelled K+1");
    ScoredSet s;
    for (auto i : rows) s.labels.push_back(set.labels[i]);
    s.report = score_batch(model, select_rows(set.features, rows), scorer, cp, temperature, ev.threshold);
    ev.per_set[name] = summarize(ev.id_acc, ev.id.report.scores, s.report.scores);
    ev.ood.emplace(name, std::move(s));
  }
  if (ev.per_set.empty()) throw Error(ErrorKind::EmptyInput, "no OOD sets to evaluate");
  const double n = static_cast<double>(ev.per_set.size());
  ev.overall.id_acc = ev.id_acc;
  for (const auto& [name, m] : ev.per_set) {
    ev.overall.fpr_at_95 += m.fpr_at_95 / n;
    ev.overall.auroc += m.auroc / n;
    ev.overall.aupr_in += m.aupr_in / n;
    ev.overall.aupr_out += m.aupr_out / n;
  }
  if (ev.per_set.size() == 1) ev.overall = ev.per_set.begin()->second;
  return ev;
}

}  // namespace grod::harness
