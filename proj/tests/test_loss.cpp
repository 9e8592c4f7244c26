#include <gtest/gtest.h>

#include <cmath>

#include "grod/loss.hpp"
#include "support/gradcheck.hpp"

using namespace grod;

namespace {

// Logits whose softmax is exactly p (up to rounding).
Vector logits_for(const Vector& p) { return p.array().log().matrix(); }

}  // namespace

TEST(LossL1, Examples) {
  EXPECT_NEAR(loss_l1(one_hot(1, 3), Vector::Zero(3)), std::log(3.0), 1e-15);
  EXPECT_NEAR(loss_l1(one_hot(2, 3), Eigen::Vector3d(0, 80, 0)), 0.0, 1e-30);
  const Vector z = Eigen::Vector3d(0.3, -1.0, 2.0);
  const Vector p = softmax(z);
  const double entropy = -(p.array() * p.array().log()).sum();
  EXPECT_NEAR(loss_l1(p, z), entropy, 1e-14);
}

TEST(LossL2, Examples) {
  const Vector z = logits_for(Eigen::Vector3d(0.7, 0.2, 0.1));
  EXPECT_NEAR(loss_l2(one_hot(1, 3), z), -std::log(0.9), 1e-14);
  EXPECT_NEAR(loss_l2(one_hot(3, 3), Eigen::Vector3d(-100, -100, 100)), 0.0, 1e-30);
  const double clamped = loss_l2(one_hot(3, 3), Eigen::Vector3d(500, 500, -500));
  EXPECT_TRUE(std::isfinite(clamped));
  EXPECT_NEAR(clamped, -std::log(kLogClamp), 1e-9);
}

TEST(LossTotal, ConvexCombination) {
  const Vector z = logits_for(Eigen::Vector3d(0.7, 0.2, 0.1));
  const Vector y = one_hot(1, 3);
  EXPECT_EQ(loss_total(y, z, 0.0), loss_l1(y, z));
  EXPECT_EQ(loss_total(y, z, 1.0), loss_l2(y, z));
  const double expect = 0.9 * -std::log(0.7) + 0.1 * -std::log(0.9);
  EXPECT_NEAR(loss_total(y, z, 0.1), expect, 1e-14);
  EXPECT_NEAR(loss_total(y, z, 0.1), 0.3315, 5e-5);
}

TEST(LossGrad, CrossEntropyCase) {
  const Vector z = Eigen::Vector4d(0.1, -0.4, 1.2, 0.0);
  const Vector y = one_hot(3, 4);
  EXPECT_LE((loss_grad_logits(y, z, 0.0) - (softmax(z) - y)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LossGrad, MatchesFiniteDifferences) {
  CounterRng rng(99);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index outputs = 2 + static_cast<Eigen::Index>(rng.below(5));
    const Vector y = oracle::random_label(outputs, rng);
    Vector z(outputs);
    for (Eigen::Index i = 0; i < outputs; ++i) z(i) = 2.0 * rng.normal();
    const double gamma = rng.uniform();
    const auto r = oracle::check_loss_gradient(y, z, gamma);
    EXPECT_LE(r.max_rel_error, 1e-6) << "triple " << t;
  }
}

TEST(LossGrad, ZeroAtOptimum) {
  const Vector p = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
  EXPECT_LE(loss_grad_logits(p, logits_for(p), 0.3).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Loss, NonNegative) {
  CounterRng rng(5);
  for (int t = 0; t < 200; ++t) {
    const Vector y = oracle::random_label(4, rng);
    Vector z(4);
    for (int i = 0; i < 4; ++i) z(i) = 30.0 * rng.normal();
    EXPECT_GE(loss_total(y, z, rng.uniform()), 0.0);
  }
}

TEST(LossL2, InvariantUnderIdPermutation) {
  CounterRng rng(6);
  for (int t = 0; t < 50; ++t) {
    const Vector y = oracle::random_label(5, rng);
    Vector z(5);
    for (int i = 0; i < 5; ++i) z(i) = rng.normal();
    const auto perm = random_permutation(4, rng);
    Vector yp = y, zp = z;
    for (int i = 0; i < 4; ++i) {
      yp(i) = y(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
      zp(i) = z(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
    }
    EXPECT_NEAR(loss_l2(yp, zp), loss_l2(y, z), 1e-12);
  }
}

TEST(Loss, IdConfusionCostsLessThanRejection) {
  // A confident prediction of another ID class never costs more than a
  // confident OOD prediction for an ID label.
  const int k = 3;
  for (double gamma : {0.0, 0.1, 0.5, 1.0}) {
    for (int truth = 1; truth <= k; ++truth) {
      const Vector y = one_hot(truth, k + 1);
      const double reject = loss_total(y, 5.0 * one_hot(k + 1, k + 1), gamma);
      for (int pred = 1; pred <= k; ++pred) {
        EXPECT_LE(loss_total(y, 5.0 * one_hot(pred, k + 1), gamma), reject);
      }
    }
  }
}

TEST(BatchLoss, MeanOfRows) {
  Matrix y(2, 3), z(2, 3);
  y << 1, 0, 0, 0, 0, 1;
  z << 0, 0, 0, 1, 2, 3;
  const auto b = batch_loss(y, z, 0.25);
  const double l1 = 0.5 * (loss_l1(y.row(0).transpose(), z.row(0).transpose()) +
                           loss_l1(y.row(1).transpose(), z.row(1).transpose()));
  EXPECT_NEAR(b.l1, l1, 1e-15);
  EXPECT_NEAR(b.total, 0.75 * b.l1 + 0.25 * b.l2, 1e-15);
}
