#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "l2rm/datagen.hpp"
#include "testing.hpp"

namespace {

using namespace l2rm::data;
using Eigen::MatrixXd;

// Independent ranking oracle: stable sort of candidates by descending score.
double sort_recall(const MatrixXd& s, int k, bool by_row) {
  const Eigen::Index n = s.rows();
  int hits = 0;
  for (Eigen::Index q = 0; q < n; ++q) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return by_row ? s(q, a) > s(q, b) : s(a, q) > s(b, q);
    });
    const auto pos = std::find(order.begin(), order.end(), q) - order.begin();
    hits += pos < k ? 1 : 0;
  }
  return 100.0 * hits / static_cast<double>(n);
}

TEST(Generate, DeterministicAndNoiseFree) {
  const PairDataset a = generate(50, 5, 0.1, 3);
  const PairDataset b = generate(50, 5, 0.1, 3);
  EXPECT_TRUE(a.v == b.v);
  EXPECT_TRUE(a.t == b.t);
  EXPECT_EQ(a.image_class, b.image_class);
  EXPECT_TRUE(std::all_of(a.m.begin(), a.m.end(), [](int m) { return m == 1; }));

  const PairDataset clean = generate(40, 4, 0.0, 1);
  for (std::size_t i = 1; i < clean.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (clean.image_class[i] == clean.image_class[j]) {
        EXPECT_TRUE(clean.v.row(i) == clean.v.row(j));
        EXPECT_TRUE(clean.t.row(i) == clean.t.row(j));
      }
    }
  }
  EXPECT_THROW(generate(3, 4, 0.1, 0), std::invalid_argument);
}

TEST(Generate, ClassesSeparableByNearestPrototype) {
  const PairDataset ds = generate(1000, 10, 0.1, 0);
  MatrixXd centers = MatrixXd::Zero(10, ds.v.cols());
  std::vector<int> count(10, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    centers.row(ds.image_class[i]) += ds.v.row(static_cast<Eigen::Index>(i));
    ++count[static_cast<std::size_t>(ds.image_class[i])];
  }
  for (int c = 0; c < 10; ++c) centers.row(c) /= count[static_cast<std::size_t>(c)];
  int correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Eigen::Index best;
    (centers.rowwise() - ds.v.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm().minCoeff(&best);
    correct += best == ds.image_class[i] ? 1 : 0;
  }
  EXPECT_GT(correct / static_cast<double>(ds.size()), 0.95);
}

TEST(Corrupt, ZeroRateLeavesDataUnchanged) {
  const PairDataset ds = generate(60, 6, 0.1, 2);
  const PairDataset out = corrupt(ds, 0.0, 5);
  EXPECT_TRUE(out.t == ds.t);
  EXPECT_EQ(out.m, ds.m);
}

TEST(Corrupt, DerangesExactlyTheSelection) {
  const PairDataset ds = generate(100, 10, 0.1, 4);
  const PairDataset out = corrupt(ds, 0.5, 9);
  const auto moved = std::count(out.permuted.begin(), out.permuted.end(), 1);
  EXPECT_EQ(moved, 50);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    EXPECT_EQ(out.permuted[i] == 1, !(out.t.row(r) == ds.t.row(r)));
    EXPECT_EQ(out.m[i] == 0, out.caption_class[i] != out.image_class[i]);
  }
  // Same multiset of caption rows.
  std::vector<std::vector<double>> before, after;
  for (Eigen::Index i = 0; i < ds.t.rows(); ++i) {
    before.emplace_back(ds.t.row(i).data(), ds.t.row(i).data() + 0);
    std::vector<double> a(ds.t.cols()), b(ds.t.cols());
    for (Eigen::Index j = 0; j < ds.t.cols(); ++j) {
      a[static_cast<std::size_t>(j)] = ds.t(i, j);
      b[static_cast<std::size_t>(j)] = out.t(i, j);
    }
    before.back() = a;
    after.push_back(b);
  }
  std::sort(before.begin(), before.end());
  std::sort(after.begin(), after.end());
  EXPECT_EQ(before, after);
}

TEST(Corrupt, MismatchFractionUpToCollisions) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PairDataset out = corrupt(generate(500, 10, 0.1, seed), 0.4, seed + 100);
    const auto mis = std::count(out.m.begin(), out.m.end(), 0);
    const auto moved = std::count(out.permuted.begin(), out.permuted.end(), 1);
    EXPECT_EQ(moved, 200);
    // A moved caption keeps m = 1 only on a same-class collision (≈ 1/classes of moves).
    EXPECT_LE(mis, 200);
    EXPECT_GE(mis, 200 - 40);
  }
}

TEST(Corrupt, SelectionOfOneIsWidened) {
  const PairDataset out = corrupt(generate(10, 2, 0.1, 0), 0.1, 1);
  EXPECT_EQ(std::count(out.permuted.begin(), out.permuted.end(), 1), 2);
}

TEST(Corrupt, LeavesTestSplitClean) {
  PairDataset ds = make_dataset(200, 10, 0.1, 0.6, 3);
  for (std::size_t i : ds.indices(Split::kTest)) EXPECT_EQ(ds.permuted[i], 0);
  EXPECT_EQ(ds.indices(Split::kTest).size(), 40u);
}

TEST(Jsonl, RoundTrip) {
  const PairDataset ds = make_dataset(30, 3, 0.1, 0.4, 8);
  std::stringstream ss;
  write_jsonl(ds, ss);
  const PairDataset back = read_jsonl(ss);
  EXPECT_TRUE(back.v == ds.v);
  EXPECT_TRUE(back.t == ds.t);
  EXPECT_EQ(back.m, ds.m);
  EXPECT_EQ(back.caption_class, ds.caption_class);
  EXPECT_EQ(back.split, ds.split);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.mrate, ds.mrate);

  std::stringstream bad("{\"format\":\"other\"}\n");
  EXPECT_THROW(read_jsonl(bad), std::runtime_error);
}

TEST(RecallAtK, PerfectRanking) {
  const MatrixXd s = MatrixXd::Identity(12, 12);
  const Recall r = recall_at_k(s);
  EXPECT_EQ(r.i2t[0], 100.0);
  EXPECT_EQ(r.t2i[0], 100.0);
  EXPECT_EQ(r.rsum, 600.0);
}

TEST(RecallAtK, ConstantMatrixFollowsTieBreak) {
  const MatrixXd s = MatrixXd::Constant(10, 10, 0.3);
  const Recall r = recall_at_k(s);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(r.i2t[k], sort_recall(s, r.ks[k], true));
    EXPECT_EQ(r.t2i[k], sort_recall(s, r.ks[k], false));
  }
  EXPECT_EQ(r.i2t[0], 10.0);
}

TEST(RecallAtK, MatchesSortOracleAndMonotoneTransforms) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    MatrixXd s = l2rm::testing::uniform_matrix(50, 50, rng);
    s += 0.3 * MatrixXd::Identity(50, 50);
    const Recall r = recall_at_k(s);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(r.i2t[k], sort_recall(s, r.ks[k], true));
      EXPECT_EQ(r.t2i[k], sort_recall(s, r.ks[k], false));
    }
    const Recall r2 = recall_at_k((3.0 * s.array()).exp().matrix());
    EXPECT_EQ(r.rsum, r2.rsum);
  }
  EXPECT_THROW(recall_at_k(MatrixXd::Identity(5, 5), {10}), std::invalid_argument);
}

TEST(Identification, ExactEmptyAndEnumeration) {
  const std::vector<bool> truth = {true, false, true, false};
  const Identification exact = identification_score({0, 2}, truth);
  EXPECT_EQ(exact.f1, 1.0);
  EXPECT_EQ(identification_score({}, truth).recall, 0.0);
  EXPECT_EQ(identification_score({}, std::vector<bool>(4, false)).f1, 1.0);

  // Half overlap: predicted {0, 1} against truth {0, 2}.
  const Identification half = identification_score({0, 1}, truth);
  int tp = 0, fp = 0, fn = 0;
  const std::vector<bool> pred = {true, true, false, false};
  for (std::size_t i = 0; i < 4; ++i) {
    tp += pred[i] && truth[i];
    fp += pred[i] && !truth[i];
    fn += !pred[i] && truth[i];
  }
  const double f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  EXPECT_DOUBLE_EQ(half.f1, f1);
  EXPECT_DOUBLE_EQ(half.f1, 0.5);
}

}  // namespace
