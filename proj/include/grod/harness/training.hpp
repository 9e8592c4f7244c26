#pragma once

// Fine-tuning and inference loops. Each batch runs the model on ID rows, lets
// the GROD engine append filtered fake outliers in feature space, and takes one
// optimizer step on the mean loss over ID and fake rows. Fake rows are points
// in feature space, so they only reach the classifier head.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "grod/feature_batch.hpp"
#include "grod/grod.hpp"
#include "grod/harness/config.hpp"
#include "grod/loss.hpp"
#include "grod/metrics.hpp"
#include "grod/postprocess.hpp"
#include "grod/rng.hpp"
#include "grod/transformer.hpp"

namespace grod::harness {

// RNG streams derived from the run seed.
inline constexpr std::uint64_t kStreamInit = 100;
inline constexpr std::uint64_t kStreamSplit = 200;
inline constexpr std::uint64_t kStreamShuffle = 300;
inline constexpr std::uint64_t kStreamGrod = 400;
inline constexpr std::uint64_t kStreamValidation = 500;

struct Inference {
  Matrix features;  // n x (d_hat * tau)
  Matrix logits;    // n x (K+1)
};

inline Matrix as_input(const TransformerModel& m, const Matrix& rows, Eigen::Index r) {
  if (rows.cols() != static_cast<Eigen::Index>(m.d_in) * m.tau) {
    throw Error(ErrorKind::DimensionMismatch, "feature dim " + std::to_string(rows.cols()) + " does not match model input " +
                                                  std::to_string(m.d_in) + "x" + std::to_string(m.tau));
  }
  const Vector x = rows.row(r).transpose();
  return Eigen::Map<const Matrix>(x.data(), m.d_in, m.tau);
}

inline Inference run_model(const TransformerModel& m, const Matrix& rows) {
  Inference out;
  out.features.resize(rows.rows(), m.feature_dim());
  out.logits.resize(rows.rows(), m.outputs());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const ForwardResult f = forward(m, as_input(m, rows, r));
    out.features.row(r) = flatten_hidden(f.hidden).transpose();
    out.logits.row(r) = f.logits.transpose();
  }
  return out;
}

/// Plain transformer with uniform weights, or (head_only) an identity feature
/// map with a trainable classifier head on top.
inline TransformerModel build_model(const ExperimentConfig& cfg, const ModelShape& shape, int input_dim,
                                    int classes, std::uint64_t seed, bool head_only) {
  CounterRng rng(seed, kStreamInit);
  if (head_only) {
    TransformerModel m = make_model(input_dim, 1, 0, Budget{input_dim, 1, 1, 1, 1}, classes);
    init_uniform(m, rng, cfg.init_scale);
    m.w_in = Matrix::Identity(input_dim, input_dim);
    m.b_in.setZero();
    return m;
  }
  TransformerModel m = make_model(input_dim, 1, shape.depth, shape.budget, classes);
  init_uniform(m, rng, cfg.init_scale);
  return m;
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  long retained_ood = 0;
  long warmup_batches = 0;
  std::optional<double> val_auroc;
  double val_acc = 0.0;
};

struct TrainResult {
  TransformerModel model;
  GrodState state;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

struct Split {
  FeatureBatch train;
  FeatureBatch validation;
};

/// Holds out floor(fraction * n) rows chosen by the seed.
inline Split validation_split(const FeatureBatch& data, double fraction, std::uint64_t seed) {
  CounterRng rng(seed, kStreamSplit);
  const auto order = random_permutation(static_cast<std::size_t>(data.rows()), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.rows())));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  auto take = [&data](const std::vector<std::size_t>& idx) {
    FeatureBatch b;
    b.classes = data.classes;
    b.features = select_rows(data.features, idx);
    for (auto i : idx) b.labels.push_back(data.labels[i]);
    return b;
  };
  return {take(train), take(val)};
}

inline double argmax_accuracy(const Matrix& logits, const std::vector<int>& labels, int classes) {
  std::vector<int> pred;
  pred.reserve(labels.size());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    pred.push_back(classify_max(logits.row(r).head(classes).transpose()));
  }
  return id_accuracy(pred, labels, classes);
}

inline std::vector<double> msp_scores(const Matrix& logits) {
  const Matrix adjusted = adjust_logits_rows(logits);
  std::vector<double> s(static_cast<std::size_t>(adjusted.rows()));
  for (Eigen::Index r = 0; r < adjusted.rows(); ++r) s[static_cast<std::size_t>(r)] = adjusted.row(r).maxCoeff();
  return s;
}

namespace detail {

struct BatchOutcome {
  LossBreakdown loss;
  Eigen::Index rows = 0;
  long retained = 0;
  bool warmup = false;
};

inline BatchOutcome train_batch(TransformerModel& model, TransformerModel& grads, const Matrix& rows,
                                const std::vector<int>& labels, GrodState& state, const GrodConfig& gcfg,
                                CounterRng& grod_rng, ParamScope scope, const auto& step) {
  const Eigen::Index n = rows.rows();
  std::vector<ForwardCache> caches;
  caches.reserve(static_cast<std::size_t>(n));
  Matrix features(n, model.feature_dim());
  for (Eigen::Index r = 0; r < n; ++r) {
    caches.push_back(forward_cached(model, as_input(model, rows, r)));
    features.row(r) = flatten_hidden(caches.back().hidden).transpose();
  }
  const AugmentedBatch aug = grod_augment_batch(features, labels, state, gcfg, grod_rng);
  const double gamma = aug.warmup ? 0.0 : gcfg.gamma;
  const Eigen::Index total = aug.features.rows();
  const double inv = 1.0 / static_cast<double>(total);

  Matrix logits(total, model.outputs());
  set_zero(grads);
  for (Eigen::Index r = 0; r < total; ++r) {
    const Vector y = aug.labels.row(r).transpose();
    if (r < aug.id_rows) {
      const ForwardCache& c = caches[static_cast<std::size_t>(r)];
      logits.row(r) = c.logits.transpose();
      const Vector g = loss_grad_logits(y, c.logits, gamma) * inv;
      if (scope == ParamScope::All) backward(model, c, g, grads);
      else head_backward(model, c.hidden, g, grads);
    } else {
      const Matrix hidden = unflatten_hidden(aug.features.row(r).transpose(), model.budget.d_hat, model.tau);
      const Vector z = head_logits(model.head, hidden);
      logits.row(r) = z.transpose();
      head_backward(model, hidden, loss_grad_logits(y, z, gamma) * inv, grads);
    }
  }
  step(model, grads);
  BatchOutcome out;
  out.loss = batch_loss(aug.labels, logits, gamma);
  out.rows = total;
  out.retained = static_cast<long>(aug.fake.size());
  out.warmup = aug.warmup;
  return out;
}

/// Validation score: AUROC of MSP on held-out ID rows against fake outliers
/// drawn from those rows with a copy of the current GROD state.
inline std::optional<double> validation_auroc(const TransformerModel& model, const Inference& val,
                                              const std::vector<int>& labels, const GrodState& state,
                                              const GrodConfig& gcfg, std::uint64_t seed, int epoch) {
  if (!state.initialized || !gcfg.generates_outliers() || val.features.rows() < 2) return std::nullopt;
  GrodState copy = state;
  GrodConfig cfg = gcfg;
  cfg.warmup_batches = 0;
  cfg.adapt_lambda = false;
  CounterRng rng(seed, kStreamValidation + static_cast<std::uint64_t>(epoch));
  const AugmentedBatch aug = grod_augment_batch(val.features, labels, copy, cfg, rng);
  if (aug.fake.size() == 0) return std::nullopt;
  Matrix fake_logits(static_cast<Eigen::Index>(aug.fake.size()), model.outputs());
  for (Eigen::Index r = 0; r < fake_logits.rows(); ++r) {
    const Matrix hidden = unflatten_hidden(aug.fake.points.row(r).transpose(), model.budget.d_hat, model.tau);
    fake_logits.row(r) = head_logits(model.head, hidden).transpose();
  }
  return auroc(msp_scores(val.logits), msp_scores(fake_logits));
}

}  // namespace detail

/// Trains on `data`, holding out a validation split, and returns the model from
/// the epoch with the best validation AUROC (validation accuracy when no fake
/// outliers are available; earliest epoch on ties). Epochs that still contain
/// warmup batches are only kept until a post-warmup epoch exists.
inline TrainResult train_model(const ExperimentConfig& cfg, const ModelShape& shape, const FeatureBatch& data,
                               std::uint64_t seed, bool head_only = false) {
  data.check();
  const Split split = validation_split(data, cfg.validation_fraction, seed);
  if (split.train.rows() < 2) throw Error(ErrorKind::TooFewSamples, "training split has fewer than 2 rows");
  const int classes = data.classes;
  const ParamScope scope = head_only ? ParamScope::HeadOnly : ParamScope::All;

  TrainResult result;
  result.model = build_model(cfg, shape, static_cast<int>(data.dim()), classes, seed, head_only);
  result.state = make_state(classes, cfg.grod);
  TransformerModel grads = zeros_like(result.model);

  std::variant<AdamWOptimizer, SgdOptimizer> opt =
      cfg.optimizer == OptimizerKind::AdamW
          ? std::variant<AdamWOptimizer, SgdOptimizer>(
                AdamWOptimizer(result.model, {cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8}))
          : std::variant<AdamWOptimizer, SgdOptimizer>(SgdOptimizer(cfg.lr, cfg.weight_decay));
  auto step = [&opt, scope](TransformerModel& m, TransformerModel& g) {
    std::visit([&](auto& o) { o.step(m, g, scope); }, opt);
  };

  CounterRng shuffle(seed, kStreamShuffle);
  CounterRng grod_rng(seed, kStreamGrod);
  const auto n = static_cast<std::size_t>(split.train.rows());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  TransformerModel best_model = result.model;
  GrodState best_state = result.state;
  double best = -1.0;
  bool best_is_auroc = false;
  bool have_eligible = false;
  long batch_counter = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = random_permutation(n, shuffle);
    EpochLog log;
    log.epoch = epoch;
    double rows_seen = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      if (stop - start < 2) break;
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(split.train.labels[i]);
      detail::BatchOutcome o;
      try {
        o = detail::train_batch(result.model, grads, select_rows(split.train.features, idx), labels, result.state,
                                cfg.grod, grod_rng, scope, step);
      } catch (const Error& e) {
        const std::string what = e.what();
        const std::string prefix = std::string(to_string(e.kind())) + ": ";
        throw Error(e.kind(), "batch " + std::to_string(batch_counter) + ": " + what.substr(prefix.size()));
      }
      ++batch_counter;
      const auto w = static_cast<double>(o.rows);
      log.l1 += o.loss.l1 * w;
      log.l2 += o.loss.l2 * w;
      log.loss += o.loss.total * w;
      rows_seen += w;
      log.retained_ood += o.retained;
      log.warmup_batches += o.warmup ? 1 : 0;
    }
    log.l1 /= rows_seen;
    log.l2 /= rows_seen;
    log.loss /= rows_seen;

    const bool eligible = log.warmup_batches == 0;
    bool take = false;
    if (split.validation.rows() > 0) {
      const Inference val = run_model(result.model, split.validation.features);
      log.val_acc = argmax_accuracy(val.logits, split.validation.labels, classes);
      log.val_auroc = detail::validation_auroc(result.model, val, split.validation.labels, result.state, cfg.grod,
                                               seed, epoch);
    }
    if (!eligible) {
      take = !have_eligible;
    } else if (split.validation.rows() == 0) {
      take = true;
    } else if (log.val_auroc) {
      take = !best_is_auroc || *log.val_auroc > best;
      if (take) {
        best = *log.val_auroc;
        best_is_auroc = true;
      }
    } else if (!best_is_auroc && log.val_acc > best) {
      take = true;
      best = log.val_acc;
    }
    if (take) {
      result.best_epoch = epoch;
      best_model = result.model;
      best_state = result.state;
      have_eligible = have_eligible || eligible;
    }
    result.log.push_back(log);
  }
  result.model = std::move(best_model);
  result.state = std::move(best_state);
  return result;
}

}  // namespace grod::harness
