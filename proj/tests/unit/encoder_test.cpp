#include <random>

#include <gtest/gtest.h>

#include "l2rm/encoder.hpp"
#include "l2rm/losses.hpp"
#include "l2rm/ot.hpp"
#include "testing.hpp"

namespace {

using namespace l2rm::encoder;
using l2rm::testing::numeric_gradient;
using l2rm::testing::relative_error;
using l2rm::testing::uniform_matrix;
using Eigen::MatrixXd;

TEST(Similarity, IdentityProjectionGivesCosines) {
  EncoderParams p{MatrixXd::Identity(3, 3), MatrixXd::Identity(3, 3)};
  MatrixXd v(2, 3);
  v << 1, 2, 3, -1, 0, 2;
  EXPECT_NEAR(similarity(p, v, v).diagonal().minCoeff(), 1.0, 1e-15);
  MatrixXd a(1, 3), b(1, 3);
  a << 1, 0, 0;
  b << 0, 5, 0;
  EXPECT_NEAR(similarity(p, a, b)(0, 0), 0.0, 1e-15);
}

TEST(Similarity, UnitRowsRangeAndScaleInvariance) {
  std::mt19937_64 rng(1);
  const EncoderParams p = EncoderParams::random(6, 5, 4, 7);
  const MatrixXd v = uniform_matrix(5, 6, rng), t = uniform_matrix(5, 5, rng);
  const Forward f = forward(p, v, t);
  EXPECT_LT((f.u_v.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_LE(f.s.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  MatrixXd v2 = v;
  v2.row(2) *= 3.7;
  EXPECT_LT((similarity(p, v2, t) - f.s).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Similarity, ZeroEmbeddingIsFlaggedAndFloored) {
  const EncoderParams p = EncoderParams::random(3, 3, 2, 1);
  const Forward f = forward(p, MatrixXd::Zero(1, 3), MatrixXd::Ones(1, 3));
  EXPECT_TRUE(f.floored);
  EXPECT_TRUE(f.s.allFinite());
  EXPECT_THROW(forward(p, MatrixXd::Zero(1, 4), MatrixXd::Ones(1, 3)), std::invalid_argument);
}

// Chain gradient of loss(similarity(W)) against central differences in W_v and W_t.
template <class Loss>
void check_chain(Loss loss, std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  const EncoderParams p = EncoderParams::random(5, 4, 3, seed);
  const MatrixXd v = uniform_matrix(n, 5, rng), t = uniform_matrix(n, 4, rng);
  const Forward f = forward(p, v, t);
  const EncoderGrad g = backward(v, t, f, loss(f.s).grad);
  const MatrixXd fd_v = numeric_gradient(
      [&](const MatrixXd& w) { return loss(similarity({w, p.w_t}, v, t)).value; }, p.w_v);
  const MatrixXd fd_t = numeric_gradient(
      [&](const MatrixXd& w) { return loss(similarity({p.w_v, w}, v, t)).value; }, p.w_t);
  EXPECT_LT(relative_error(g.w_v, fd_v), 1e-4) << "seed " << seed;
  EXPECT_LT(relative_error(g.w_t, fd_t), 1e-4) << "seed " << seed;
}

TEST(Backward, SimilarityJacobian) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const MatrixXd weights = uniform_matrix(3, 3, rng);
    check_chain([&](const MatrixXd& s) {
      return l2rm::loss::LossValue{weights.cwiseProduct(s).sum(), weights};
    }, seed, 3);
  }
}

TEST(Backward, ThroughEveryLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    check_chain([](const MatrixXd& s) { return l2rm::loss::infonce_loss(s, 0.5); }, seed, 4);
    check_chain([](const MatrixXd& s) { return l2rm::loss::rce_loss(s, 0.5, 1e-7); }, seed, 4);
    check_chain([](const MatrixXd& s) { return l2rm::loss::triplet_batch(s, 0.2); }, seed, 4);
    std::mt19937_64 rng(seed);
    const auto mask = l2rm::ot::MaskMatrix::off_diagonal(4);
    const MatrixXd plan = uniform_matrix(4, 4, rng, 0.0, 1.0).cwiseProduct(mask.as_real());
    const MatrixXd r = l2rm::ot::normalize_plan(plan, mask, l2rm::ot::Direction::kRow);
    const MatrixXd c = l2rm::ot::normalize_plan(plan, mask, l2rm::ot::Direction::kColumn);
    check_chain([&](const MatrixXd& s) { return l2rm::loss::rematch_loss(r, c, s, 0.5); }, seed, 4);
  }
}

TEST(SgdStep, TrivialCasesAndNonFinite) {
  const EncoderParams p = EncoderParams::random(3, 3, 2, 2);
  const EncoderGrad z = EncoderGrad::zeros_like(p);
  EXPECT_TRUE(sgd_step(p, z, 0.1).w_v == p.w_v);
  EncoderGrad g = z;
  g.w_v.setOnes();
  EXPECT_TRUE(sgd_step(p, g, 0.0).w_v == p.w_v);
  g.w_t(0, 0) = std::nan("");
  EXPECT_THROW(sgd_step(p, g, 0.1), std::domain_error);
}

TEST(SgdStep, DecreasesAConvexLoss) {
  // ½‖W − target‖² in W_v; gradient W − target.
  const EncoderParams p = EncoderParams::random(4, 4, 3, 3);
  const MatrixXd target = MatrixXd::Ones(4, 3);
  auto loss = [&](const EncoderParams& q) { return 0.5 * (q.w_v - target).squaredNorm(); };
  EncoderGrad g = EncoderGrad::zeros_like(p);
  g.w_v = p.w_v - target;
  EXPECT_LT(loss(sgd_step(p, g, 0.1)), loss(p));
  Adam adam;
  EncoderParams q = p;
  for (int i = 0; i < 50; ++i) {
    EncoderGrad ga = EncoderGrad::zeros_like(q);
    ga.w_v = q.w_v - target;
    q = adam.step(q, ga, 0.05);
  }
  EXPECT_LT(loss(q), loss(p));
}

}  // namespace
