#pragma once

// Minimal transformer without normalization or attention scaling:
//
//   h_0      = W_in (X + PE) + b_in 1^T
//   Att(h)   = h + sum_i W_O^i W_V^i h . softmax_col[(W_K^i h)^T W_Q^i h]
//   FF(h)    = Att(h) + W_2 ReLU(W_1 Att(h) + b_1 1^T) + b_2 1^T
//   f^k(h_l) = W_4,k (W_3,k h_l + b_3,k)^T + b_4,k,   k = 1..K+1
//
// Hidden states are d_hat x tau; the positional encoding is only added when
// tau > 1. Gradients are analytic and exercised against finite differences in
// the test suite.

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grod/numerics.hpp"
#include "grod/rng.hpp"

namespace grod {

/// Per-block width m = (d_hat, h, m_h, m_V, r).
struct Budget {
  int d_hat = 2;
  int heads = 1;
  int m_h = 1;
  int m_v = 1;
  int r = 1;

  bool valid() const { return d_hat >= 1 && heads >= 1 && m_h >= 1 && m_v >= 1 && r >= 1; }
  bool operator==(const Budget&) const = default;
};

struct AttentionHead {
  Matrix wq;  // m_h x d_hat
  Matrix wk;  // m_h x d_hat
  Matrix wv;  // m_v x d_hat
  Matrix wo;  // d_hat x m_v
};

struct Block {
  std::vector<AttentionHead> heads;
  Matrix w1;  // r x d_hat
  Matrix b1;  // r x 1
  Matrix w2;  // d_hat x r
  Matrix b2;  // d_hat x 1
};

/// Row k holds W_3,k / b_3,k / W_4,k / b_4,k.
struct ClassifierHead {
  Matrix w3;  // (K+1) x d_hat
  Matrix b3;  // (K+1) x tau
  Matrix w4;  // (K+1) x tau
  Matrix b4;  // (K+1) x 1
};

struct TransformerModel {
  int d_in = 2;
  int tau = 1;
  int classes = 2;  // K; the head has K+1 outputs
  Budget budget;
  Matrix w_in;  // d_hat x d_in
  Matrix b_in;  // d_hat x 1
  std::vector<Block> blocks;
  ClassifierHead head;

  int depth() const { return static_cast<int>(blocks.size()); }
  int outputs() const { return classes + 1; }
  int feature_dim() const { return budget.d_hat * tau; }
};

/// Zero-initialized model with consistent shapes.
inline TransformerModel make_model(int d_in, int tau, int depth, const Budget& budget, int classes) {
  if (d_in < 1 || tau < 1 || depth < 0 || classes < 1 || !budget.valid()) {
    throw Error(ErrorKind::ShapeMismatch, "invalid model dimensions");
  }
  const int d = budget.d_hat;
  TransformerModel m;
  m.d_in = d_in;
  m.tau = tau;
  m.classes = classes;
  m.budget = budget;
  m.w_in = Matrix::Zero(d, d_in);
  m.b_in = Matrix::Zero(d, 1);
  m.blocks.resize(static_cast<std::size_t>(depth));
  for (auto& b : m.blocks) {
    b.heads.resize(static_cast<std::size_t>(budget.heads));
    for (auto& h : b.heads) {
      h.wq = Matrix::Zero(budget.m_h, d);
      h.wk = Matrix::Zero(budget.m_h, d);
      h.wv = Matrix::Zero(budget.m_v, d);
      h.wo = Matrix::Zero(d, budget.m_v);
    }
    b.w1 = Matrix::Zero(budget.r, d);
    b.b1 = Matrix::Zero(budget.r, 1);
    b.w2 = Matrix::Zero(d, budget.r);
    b.b2 = Matrix::Zero(d, 1);
  }
  const int c = classes + 1;
  m.head.w3 = Matrix::Zero(c, d);
  m.head.b3 = Matrix::Zero(c, tau);
  m.head.w4 = Matrix::Zero(c, tau);
  m.head.b4 = Matrix::Zero(c, 1);
  return m;
}

inline TransformerModel zeros_like(const TransformerModel& m) {
  return make_model(m.d_in, m.tau, m.depth(), m.budget, m.classes);
}

enum class ParamScope { All, HeadOnly };

using NamedParam = std::pair<std::string, Matrix*>;
using NamedConstParam = std::pair<std::string, const Matrix*>;

namespace detail {

template <typename Model, typename Out>
void collect_params(Model& m, ParamScope scope, Out& out) {
  if (scope == ParamScope::All) {
    out.emplace_back("w_in", &m.w_in);
    out.emplace_back("b_in", &m.b_in);
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
      auto& b = m.blocks[l];
      const std::string p = "block" + std::to_string(l) + ".";
      for (std::size_t i = 0; i < b.heads.size(); ++i) {
        const std::string hp = p + "head" + std::to_string(i) + ".";
        out.emplace_back(hp + "wq", &b.heads[i].wq);
        out.emplace_back(hp + "wk", &b.heads[i].wk);
        out.emplace_back(hp + "wv", &b.heads[i].wv);
        out.emplace_back(hp + "wo", &b.heads[i].wo);
      }
      out.emplace_back(p + "w1", &b.w1);
      out.emplace_back(p + "b1", &b.b1);
      out.emplace_back(p + "w2", &b.w2);
      out.emplace_back(p + "b2", &b.b2);
    }
  }
  out.emplace_back("head.w3", &m.head.w3);
  out.emplace_back("head.b3", &m.head.b3);
  out.emplace_back("head.w4", &m.head.w4);
  out.emplace_back("head.b4", &m.head.b4);
}

}  // namespace detail

inline std::vector<NamedParam> parameters(TransformerModel& m, ParamScope scope = ParamScope::All) {
  std::vector<NamedParam> out;
  detail::collect_params(m, scope, out);
  return out;
}

inline std::vector<NamedConstParam> parameters(const TransformerModel& m,
                                               ParamScope scope = ParamScope::All) {
  std::vector<NamedConstParam> out;
  detail::collect_params(m, scope, out);
  return out;
}

inline std::size_t parameter_count(const TransformerModel& m) {
  std::size_t n = 0;
  for (const auto& [name, p] : parameters(m)) n += static_cast<std::size_t>(p->size());
  return n;
}

/// Weights uniform in (-scale, scale), biases zero.
inline void init_uniform(TransformerModel& m, CounterRng& rng, double scale = 0.1) {
  for (auto& [name, p] : parameters(m)) {
    const bool is_bias = name.find(".b") != std::string::npos || name == "b_in";
    for (Eigen::Index i = 0; i < p->size(); ++i) {
      p->data()[i] = is_bias ? 0.0 : rng.uniform(-scale, scale);
    }
  }
}

/// Fixed sinusoidal encoding, d_in x tau.
inline Matrix positional_encoding(int d_in, int tau) {
  Matrix pe(d_in, tau);
  for (int t = 0; t < tau; ++t) {
    for (int i = 0; i < d_in; ++i) {
      const int even = i - (i % 2);
      const double angle = t / std::pow(10000.0, static_cast<double>(even) / d_in);
      pe(i, t) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

struct HeadCache {
  Matrix k, q, v;
  Matrix scores;  // column-softmaxed attention, tau x tau
  Matrix mixed;   // V * scores
};

struct BlockCache {
  Matrix input;
  std::vector<HeadCache> heads;
  Matrix att;
  Matrix pre_act;
  Matrix act;
};

struct ForwardCache {
  Matrix input;  // after positional encoding
  Matrix h0;
  std::vector<BlockCache> blocks;
  Matrix hidden;  // d_hat x tau
  Vector logits;  // K+1
};

inline Vector head_logits(const ClassifierHead& head, const Matrix& hidden) {
  const Matrix z = head.w3 * hidden + head.b3;
  return (head.w4.array() * z.array()).rowwise().sum().matrix() + head.b4;
}

/// Hidden state flattened column by column (token-major) into a feature vector.
inline Vector flatten_hidden(const Matrix& hidden) {
  return Eigen::Map<const Vector>(hidden.data(), hidden.size());
}

inline Matrix unflatten_hidden(const Vector& feature, int d_hat, int tau) {
  if (feature.size() != static_cast<Eigen::Index>(d_hat) * tau) {
    throw Error(ErrorKind::ShapeMismatch, "feature of size " + std::to_string(feature.size()) +
                                              " does not reshape to " + std::to_string(d_hat) +
                                              "x" + std::to_string(tau));
  }
  return Eigen::Map<const Matrix>(feature.data(), d_hat, tau);
}

inline ForwardCache forward_cached(const TransformerModel& m, const Matrix& x) {
  if (x.rows() != m.d_in || x.cols() != m.tau) {
    throw Error(ErrorKind::ShapeMismatch, "input " + shape_of(x) + " expected " +
                                              std::to_string(m.d_in) + "x" + std::to_string(m.tau));
  }
  ForwardCache c;
  c.input = m.tau > 1 ? Matrix(x + positional_encoding(m.d_in, m.tau)) : x;
  c.h0 = m.w_in * c.input;
  c.h0.colwise() += m.b_in.col(0);

  Matrix h = c.h0;
  c.blocks.resize(m.blocks.size());
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const Block& b = m.blocks[l];
    BlockCache& bc = c.blocks[l];
    bc.input = h;
    bc.att = h;
    bc.heads.resize(b.heads.size());
    for (std::size_t i = 0; i < b.heads.size(); ++i) {
      const AttentionHead& ah = b.heads[i];
      HeadCache& hc = bc.heads[i];
      hc.k = ah.wk * h;
      hc.q = ah.wq * h;
      hc.v = ah.wv * h;
      hc.scores = column_softmax(hc.k.transpose() * hc.q);
      hc.mixed = hc.v * hc.scores;
      bc.att += ah.wo * hc.mixed;
    }
    bc.pre_act = b.w1 * bc.att;
    bc.pre_act.colwise() += b.b1.col(0);
    bc.act = bc.pre_act.cwiseMax(0.0);
    h = bc.att + b.w2 * bc.act;
    h.colwise() += b.b2.col(0);
  }
  c.hidden = h;
  c.logits = head_logits(m.head, h);
  return c;
}

struct ForwardResult {
  Matrix hidden;
  Vector logits;
};

inline ForwardResult forward(const TransformerModel& m, const Matrix& x) {
  ForwardCache c = forward_cached(m, x);
  return {std::move(c.hidden), std::move(c.logits)};
}

/// Accumulates head gradients into grads and returns d loss / d hidden.
inline Matrix head_backward(const TransformerModel& m, const Matrix& hidden, const Vector& dlogits,
                            TransformerModel& grads) {
  const ClassifierHead& head = m.head;
  const Matrix z = head.w3 * hidden + head.b3;
  const Matrix dz = head.w4.array().colwise() * dlogits.array();
  grads.head.w4.array() += z.array().colwise() * dlogits.array();
  grads.head.b4 += dlogits;
  grads.head.b3 += dz;
  grads.head.w3 += dz * hidden.transpose();
  return head.w3.transpose() * dz;
}

/// Accumulates the gradient of every parameter for one sample into grads.
inline void backward(const TransformerModel& m, const ForwardCache& c, const Vector& dlogits,
                     TransformerModel& grads) {
  Matrix dh = head_backward(m, c.hidden, dlogits, grads);

  for (std::size_t l = m.blocks.size(); l-- > 0;) {
    const Block& b = m.blocks[l];
    const BlockCache& bc = c.blocks[l];
    Block& gb = grads.blocks[l];

    // Feed-forward with residual.
    Matrix datt = dh;
    gb.w2 += dh * bc.act.transpose();
    gb.b2 += dh.rowwise().sum();
    const Matrix dact = b.w2.transpose() * dh;
    const Matrix dpre = dact.array() * (bc.pre_act.array() > 0.0).cast<double>();
    gb.w1 += dpre * bc.att.transpose();
    gb.b1 += dpre.rowwise().sum();
    datt += b.w1.transpose() * dpre;

    // Attention with residual.
    Matrix dinput = datt;
    for (std::size_t i = 0; i < b.heads.size(); ++i) {
      const AttentionHead& ah = b.heads[i];
      const HeadCache& hc = bc.heads[i];
      AttentionHead& gh = gb.heads[i];

      gh.wo += datt * hc.mixed.transpose();
      const Matrix dmixed = ah.wo.transpose() * datt;
      const Matrix dv = dmixed * hc.scores.transpose();
      const Matrix dscores = hc.v.transpose() * dmixed;
      Matrix dlogit_att(hc.scores.rows(), hc.scores.cols());
      for (Eigen::Index col = 0; col < hc.scores.cols(); ++col) {
        const double inner = hc.scores.col(col).dot(dscores.col(col));
        dlogit_att.col(col) =
            hc.scores.col(col).array() * (dscores.col(col).array() - inner);
      }
      const Matrix dk = hc.q * dlogit_att.transpose();
      const Matrix dq = hc.k * dlogit_att;

      gh.wv += dv * bc.input.transpose();
      gh.wk += dk * bc.input.transpose();
      gh.wq += dq * bc.input.transpose();
      dinput += ah.wv.transpose() * dv + ah.wk.transpose() * dk + ah.wq.transpose() * dq;
    }
    dh = std::move(dinput);
  }

  grads.w_in += dh * c.input.transpose();
  grads.b_in += dh.rowwise().sum();
}

/// Label of the largest logit, 1-based; the lowest index wins ties.
inline int classify_max(const Vector& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < logits.size(); ++k) {
    if (logits(k) > logits(best)) best = k;
  }
  return static_cast<int>(best) + 1;
}

/// Score-based rule: K+1 when score < threshold, otherwise the argmax label.
inline int classify_scored(const Vector& logits, double score, double threshold) {
  if (score < threshold) return static_cast<int>(logits.size());
  return classify_max(logits);
}

template <typename ScoreFn>
int classify_scored(const Vector& logits, ScoreFn&& score_fn, double threshold) {
  return classify_scored(logits, static_cast<double>(score_fn(logits)), threshold);
}

class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double weight_decay = 0.0) : lr_(lr), weight_decay_(weight_decay) {}

  void step(TransformerModel& model, TransformerModel& grads, ParamScope scope = ParamScope::All) {
    auto params = parameters(model, scope);
    auto gs = parameters(grads, scope);
    for (std::size_t i = 0; i < params.size(); ++i) {
      *params[i].second -= lr_ * (*gs[i].second + weight_decay_ * *params[i].second);
    }
  }

 private:
  double lr_;
  double weight_decay_;
};

/// Adam with decoupled weight decay: theta *= 1 - lr * wd, then the
/// bias-corrected Adam step.
class AdamWOptimizer {
 public:
  struct Options {
    double lr = 1e-4;
    double weight_decay = 5e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamWOptimizer(const TransformerModel& like, Options opts)
      : opts_(opts), m_(zeros_like(like)), v_(zeros_like(like)) {}

  void step(TransformerModel& model, TransformerModel& grads, ParamScope scope = ParamScope::All) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    auto params = parameters(model, scope);
    auto gs = parameters(grads, scope);
    auto ms = parameters(m_, scope);
    auto vs = parameters(v_, scope);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& p = *params[i].second;
      const Matrix& g = *gs[i].second;
      Matrix& m = *ms[i].second;
      Matrix& v = *vs[i].second;
      p *= 1.0 - opts_.lr * opts_.weight_decay;
      m = opts_.beta1 * m + (1.0 - opts_.beta1) * g;
      v = opts_.beta2 * v + (1.0 - opts_.beta2) * g.cwiseProduct(g);
      p.array() -= opts_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opts_.eps);
    }
  }

  long steps() const { return t_; }
  const Options& options() const { return opts_; }

 private:
  Options opts_;
  TransformerModel m_;
  TransformerModel v_;
  long t_ = 0;
};

inline void set_zero(TransformerModel& grads) {
  for (auto& [name, p] : parameters(grads)) p->setZero();
}

}  // namespace grod
