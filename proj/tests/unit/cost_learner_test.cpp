#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "l2rm/cost_learner.hpp"
#include "testing.hpp"

namespace {

using namespace l2rm::cost;
using l2rm::testing::uniform_matrix;
using Eigen::MatrixXd;

std::vector<std::size_t> range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v(to - from);
  std::iota(v.begin(), v.end(), from);
  return v;
}

TEST(CostForward, ValuesAndMonotonicity) {
  const MatrixXd c = cost_forward(MatrixXd::Zero(1, 1), {-1.0, 0.0});
  EXPECT_NEAR(c(0, 0), std::log(2.0), 1e-15);
  MatrixXd s(1, 2);
  s << 1.0, -1.0;
  const MatrixXd c2 = cost_forward(s, {-1.0, 0.0});
  EXPECT_LT(c2(0, 0), c2(0, 1));
  EXPECT_GT(cost_forward(MatrixXd::Constant(2, 2, 1.0), {-50.0, -50.0}).minCoeff(), 0.0);
}

TEST(CostForward, ParameterGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const MatrixXd s = uniform_matrix(4, 4, rng);
    const MatrixXd up = uniform_matrix(4, 4, rng, 0.0, 1.0);
    const CostNetParams th{-1.0 + 0.01 * trial, 0.5};
    const CostGrad g = cost_backward(s, th, up);
    const double h = 1e-6;
    auto f = [&](CostNetParams p) { return up.cwiseProduct(cost_forward(s, p)).sum(); };
    const double dw = (f({th.w + h, th.b}) - f({th.w - h, th.b})) / (2 * h);
    const double db = (f({th.w, th.b + h}) - f({th.w, th.b - h})) / (2 * h);
    EXPECT_NEAR(g.dw, dw, 1e-6 * std::max(1.0, std::abs(dw)));
    EXPECT_NEAR(g.db, db, 1e-6 * std::max(1.0, std::abs(db)));
  }
}

TEST(ReconstructPairs, CountsAndPermutation) {
  const ReconstructedBatch full = reconstruct_pairs(range(0, 6), {}, 1.0, 3);
  EXPECT_EQ(full.pi_sup.sum(), 6.0);
  EXPECT_TRUE((full.pi_sup.rowwise().sum().array() == 1.0).all());
  EXPECT_TRUE((full.pi_sup.colwise().sum().array() == 1.0).all());

  const ReconstructedBatch half = reconstruct_pairs(range(0, 4), range(10, 20), 0.5, 3);
  EXPECT_EQ(half.pi_sup.sum(), 2.0);
  EXPECT_LE(half.pi_sup.rowwise().sum().maxCoeff(), 1.0);
  EXPECT_LE(half.pi_sup.colwise().sum().maxCoeff(), 1.0);
  std::set<std::size_t> images(half.image_ids.begin(), half.image_ids.end());
  EXPECT_EQ(images.size(), 4u);
  for (Eigen::Index a = 0; a < 4; ++a)
    for (Eigen::Index b = 0; b < 4; ++b)
      EXPECT_EQ(half.pi_sup(a, b) == 1.0, half.image_ids[a] == half.text_ids[b]);
}

TEST(ReconstructPairs, HalfUpRoundingAndErrors) {
  EXPECT_EQ(reconstruct_pairs(range(0, 5), range(10, 20), 0.5, 1).pi_sup.sum(), 3.0);
  EXPECT_THROW(reconstruct_pairs(range(0, 6), range(10, 12), 0.5, 1), std::invalid_argument);
  EXPECT_THROW(reconstruct_pairs(range(0, 6), range(10, 20), 0.0, 1), std::invalid_argument);
}

TEST(ReconstructPairs, SeededDeterminism) {
  const auto a = reconstruct_pairs(range(0, 8), range(20, 40), 0.5, 42);
  const auto b = reconstruct_pairs(range(0, 8), range(20, 40), 0.5, 42);
  EXPECT_TRUE(a.pi_sup == b.pi_sup);
  EXPECT_EQ(a.image_ids, b.image_ids);
}

TEST(CostNetStep, ZeroSupervisionIsFixedPoint) {
  ReconstructedBatch b;
  b.pi_sup = MatrixXd::Zero(3, 3);
  b.sims = MatrixXd::Constant(3, 3, 0.4);
  const CostStepResult r = cost_net_step({-1.0, 1.0}, b, 0.1);
  EXPECT_EQ(r.theta.w, -1.0);
  EXPECT_EQ(r.theta.b, 1.0);
}

TEST(CostNetStep, SingleReservedPairHandGradient) {
  ReconstructedBatch b;
  b.pi_sup = MatrixXd::Zero(2, 2);
  b.pi_sup(0, 1) = 1.0;
  b.sims = MatrixXd::Zero(2, 2);
  b.sims(0, 1) = 0.8;
  const CostStepResult r = cost_net_step({-1.0, 0.0}, b, 0.1);
  const double sg = 1.0 / (1.0 + std::exp(0.8));
  EXPECT_NEAR(r.theta.w, -1.0 - 0.1 * sg * 0.8, 1e-15);
  EXPECT_NEAR(r.theta.b, 0.0 - 0.1 * sg, 1e-15);
}

TEST(CostNetStep, TraceDecreasesThenPlateaus) {
  std::mt19937_64 rng(0);
  ReconstructedBatch b = reconstruct_pairs(range(0, 16), range(100, 140), 0.5, 0);
  b.sims = uniform_matrix(16, 16, rng);
  CostNetParams th;
  std::vector<double> trace;
  bool clamped = false;
  for (int step = 0; step < 200; ++step) {
    const CostStepResult r = cost_net_step(th, b, 0.05);
    trace.push_back(r.loss_before);
    th = r.theta;
    clamped = clamped || r.clamped;
  }
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LT(trace[i], trace[i - 1]);
  EXPECT_LT(trace[199] - trace[198], 0.0);
  EXPECT_LT(trace[198] - trace[199], trace[0] - trace[1]);
  EXPECT_FALSE(clamped);
}

TEST(CostNetStep, ParametersAreBounded) {
  ReconstructedBatch b;
  b.pi_sup = MatrixXd::Identity(2, 2);
  b.sims = MatrixXd::Identity(2, 2);
  const CostStepResult r = cost_net_step({-49.99, 49.99}, b, 1000.0);
  EXPECT_TRUE(r.clamped);
  EXPECT_GE(r.theta.w, -kParamBound);
  EXPECT_GE(r.theta.b, -kParamBound);
}

}  // namespace
