#include <gtest/gtest.h>

#include "grod/transformer.hpp"
#include "support/gradcheck.hpp"

using namespace grod;

namespace {

TransformerModel seeded_model(int tau, int depth, std::uint64_t seed) {
  TransformerModel m = make_model(2, tau, depth, Budget{3, 2, 2, 2, 4}, 2);
  CounterRng rng(seed);
  init_uniform(m, rng, 0.5);
  return m;
}

}  // namespace

TEST(Forward, ZeroBlocksAreIdentity) {
  TransformerModel m = make_model(2, 2, 3, Budget{2, 1, 1, 1, 2}, 2);
  m.w_in << 1, 2, 3, 4;
  m.b_in << 0.5, -0.5;
  m.head.b4 << 0.1, 0.2, 0.3;
  Matrix x(2, 2);
  x << 1, -1, 2, 0.5;
  const auto out = forward(m, x);
  Matrix expect = m.w_in * (x + positional_encoding(2, 2));
  expect.colwise() += m.b_in.col(0);
  EXPECT_LE((out.hidden - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(out.logits, m.head.b4.col(0));
}

TEST(Forward, SingleTokenAttentionIsLinear) {
  TransformerModel m = seeded_model(1, 1, 3);
  Block& b = m.blocks[0];
  b.w1.setZero();
  b.w2.setZero();
  b.b1.setZero();
  b.b2.setZero();
  const Matrix x = Matrix::Random(2, 1);
  const auto c = forward_cached(m, x);
  Matrix expect = c.h0;
  for (const auto& h : b.heads) expect += h.wo * h.wv * c.h0;
  EXPECT_LE((c.hidden - expect).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(c.blocks[0].heads[0].scores(0, 0), 1.0);
}

TEST(Forward, HandEvaluatedTwoTokens) {
  // d_hat = 1, tau = 2, one head, one FF unit.
  TransformerModel m = make_model(1, 2, 1, Budget{1, 1, 1, 1, 1}, 1);
  m.w_in << 1.0;
  m.b_in << 0.0;
  Block& b = m.blocks[0];
  b.heads[0].wq << 1.0;
  b.heads[0].wk << 2.0;
  b.heads[0].wv << 0.5;
  b.heads[0].wo << 1.0;
  b.w1 << 1.0;
  b.b1 << -0.5;
  b.w2 << 2.0;
  b.b2 << 0.1;
  m.head.w3 << 1.0, -1.0;
  m.head.b3 << 0.0, 0.1, 0.2, 0.0;
  m.head.w4 << 1.0, 1.0, 0.5, -0.5;
  m.head.b4 << 0.3, -0.3;

  Matrix x(1, 2);
  x << 0.2, -0.4;
  const Matrix pe = positional_encoding(1, 2);
  const double h1 = 0.2 + pe(0, 0);
  const double h2 = -0.4 + pe(0, 1);
  // scores(i, j) = softmax over i of k_i * q_j with k = 2h, q = h.
  auto att = [&](double qj) {
    const double e1 = std::exp(2.0 * h1 * qj);
    const double e2 = std::exp(2.0 * h2 * qj);
    return qj + 0.5 * (h1 * e1 + h2 * e2) / (e1 + e2);
  };
  const double a1 = att(h1), a2 = att(h2);
  auto ff = [](double a) { return a + 2.0 * std::max(0.0, a - 0.5) + 0.1; };
  const double o1 = ff(a1), o2 = ff(a2);
  const double f1 = 1.0 * (o1 + 0.0) + 1.0 * (o2 + 0.1) + 0.3;
  const double f2 = 0.5 * (-o1 + 0.2) - 0.5 * (-o2 + 0.0) - 0.3;

  const auto out = forward(m, x);
  EXPECT_NEAR(out.hidden(0, 0), o1, 1e-12);
  EXPECT_NEAR(out.hidden(0, 1), o2, 1e-12);
  EXPECT_NEAR(out.logits(0), f1, 1e-10);
  EXPECT_NEAR(out.logits(1), f2, 1e-10);
}

TEST(Forward, ShapeMismatch) {
  const TransformerModel m = seeded_model(1, 1, 1);
  try {
    forward(m, Matrix::Zero(3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Forward, RepeatedCallsBitIdentical) {
  const TransformerModel m = seeded_model(2, 2, 4);
  const Matrix x = Matrix::Random(2, 2);
  const auto a = forward(m, x);
  const auto b = forward(m, x);
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_EQ(a.logits, b.logits);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const TransformerModel m = seeded_model(2, 2, 5);
  TransformerModel g = zeros_like(m);
  backward(m, forward_cached(m, Matrix::Random(2, 2)), Vector::Zero(3), g);
  for (const auto& [name, p] : parameters(static_cast<const TransformerModel&>(g))) {
    EXPECT_TRUE(p->isZero(0.0)) << name;
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  CounterRng rng(2024);
  for (int t = 0; t < 20; ++t) {
    const int tau = 1 + t % 2;
    const TransformerModel m = oracle::random_tiny_model(tau, rng);
    ASSERT_LE(parameter_count(m), 500u);
    const auto r = oracle::check_model_gradient(m, rng);
    EXPECT_LE(r.max_rel_error, 1e-4) << "model " << t << " tau " << tau;
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(Backward, ThreePointStepOnSingleToken) {
  CounterRng rng(31);
  for (int t = 0; t < 5; ++t) {
    const TransformerModel m = oracle::random_tiny_model(1, rng);
    const auto r = oracle::check_model_gradient(m, rng, oracle::Stencil::ThreePoint, 1e-5);
    EXPECT_LE(r.max_rel_error, 1e-4) << "model " << t;
  }
}

TEST(Backward, ClassifierGradientClosedForm) {
  const TransformerModel m = seeded_model(2, 1, 6);
  const Matrix h = Matrix::Random(3, 2);
  Vector w(3);
  w << 0.3, -1.2, 0.7;
  TransformerModel g = zeros_like(m);
  const Matrix dh = head_backward(m, h, w, g);
  const Matrix z = m.head.w3 * h + m.head.b3;
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(g.head.b4(k, 0), w(k), 1e-15);
    for (int t = 0; t < 2; ++t) {
      EXPECT_NEAR(g.head.w4(k, t), w(k) * z(k, t), 1e-15);
      EXPECT_NEAR(g.head.b3(k, t), w(k) * m.head.w4(k, t), 1e-15);
    }
    const Matrix w3k = (w(k) * h * m.head.w4.row(k).transpose()).transpose();
    EXPECT_LE((g.head.w3.row(k) - w3k).cwiseAbs().maxCoeff(), 1e-14);
  }
  Matrix dh_oracle = Matrix::Zero(3, 2);
  for (int k = 0; k < 3; ++k) dh_oracle += w(k) * m.head.w3.row(k).transpose() * m.head.w4.row(k);
  EXPECT_LE((dh - dh_oracle).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ClassifyMax, Examples) {
  EXPECT_EQ(classify_max(Eigen::Vector3d(0.1, 0.9, 0.2)), 2);
  EXPECT_EQ(classify_max(Eigen::Vector3d(1, 1, 1)), 1);
  EXPECT_EQ(classify_max(Eigen::Vector3d(-1, -2, 5)), 3);
}

TEST(ClassifyMax, ShiftAndScaleInvariant) {
  CounterRng rng(7);
  for (int t = 0; t < 100; ++t) {
    Vector v(4);
    for (int i = 0; i < 4; ++i) v(i) = rng.normal();
    const int base = classify_max(v);
    EXPECT_EQ(classify_max((v.array() + 3.5).matrix()), base);
    EXPECT_EQ(classify_max(2.5 * v), base);
  }
}

TEST(ClassifyScored, TwoBranchRule) {
  const Eigen::Vector3d first(0.9, 0.1, 0.0);
  const Eigen::Vector3d second(0.1, 0.9, 0.0);
  EXPECT_EQ(classify_scored(first, 0.4, 0.5), 3);
  EXPECT_EQ(classify_scored(second, 0.9, 0.5), 2);
  EXPECT_EQ(classify_scored(second, 0.5, 0.5), 2);
  EXPECT_EQ(classify_scored(second, [](const Vector&) { return 0.1; }, 0.5), 3);
}

TEST(Optimizers, ZeroGradientNoDecayIsNoop) {
  TransformerModel m = seeded_model(1, 1, 8);
  const TransformerModel before = m;
  TransformerModel g = zeros_like(m);
  SgdOptimizer(0.1).step(m, g);
  AdamWOptimizer adam(m, {.lr = 0.1, .weight_decay = 0.0});
  adam.step(m, g);
  const auto a = parameters(static_cast<const TransformerModel&>(m));
  const auto b = parameters(before);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
}

TEST(Optimizers, SgdScalarStep) {
  TransformerModel m = make_model(1, 1, 0, Budget{1, 1, 1, 1, 1}, 1);
  m.head.b4(0, 0) = 2.0;
  TransformerModel g = zeros_like(m);
  g.head.b4(0, 0) = 1.0;
  SgdOptimizer(0.1).step(m, g);
  EXPECT_DOUBLE_EQ(m.head.b4(0, 0), 1.9);
}

TEST(Optimizers, AdamWFirstStep) {
  TransformerModel m = make_model(1, 1, 0, Budget{1, 1, 1, 1, 1}, 1);
  m.head.b4(0, 0) = 2.0;
  TransformerModel g = zeros_like(m);
  g.head.b4(0, 0) = 0.3;
  const double lr = 0.01, wd = 0.05, eps = 1e-8;
  AdamWOptimizer adam(m, {.lr = lr, .weight_decay = wd, .beta1 = 0.9, .beta2 = 0.999, .eps = eps});
  adam.step(m, g);
  // m_hat = g and v_hat = g^2 after bias correction at t = 1.
  const double expect = 2.0 * (1.0 - lr * wd) - lr * 0.3 / (0.3 + eps);
  EXPECT_NEAR(m.head.b4(0, 0), expect, 1e-15);
  // Second step with the same gradient, textbook recurrence.
  adam.step(m, g);
  const double m2 = 0.9 * 0.03 + 0.1 * 0.3;
  const double v2 = 0.999 * 0.001 * 0.09 + 0.001 * 0.09;
  const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
  const double expect2 = expect * (1.0 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);
  EXPECT_NEAR(m.head.b4(0, 0), expect2, 1e-14);
}

TEST(Model, ParameterShapesFollowBudget) {
  const TransformerModel m = make_model(3, 2, 2, Budget{4, 2, 3, 5, 6}, 3);
  EXPECT_EQ(m.w_in.rows(), 4);
  EXPECT_EQ(m.w_in.cols(), 3);
  EXPECT_EQ(m.blocks[1].heads[1].wq.rows(), 3);
  EXPECT_EQ(m.blocks[1].heads[1].wv.rows(), 5);
  EXPECT_EQ(m.blocks[1].heads[1].wo.cols(), 5);
  EXPECT_EQ(m.blocks[0].w1.rows(), 6);
  EXPECT_EQ(m.head.w3.rows(), 4);
  EXPECT_EQ(m.head.b3.cols(), 2);
  EXPECT_THROW(make_model(3, 2, 2, Budget{0, 1, 1, 1, 1}, 3), Error);
}
