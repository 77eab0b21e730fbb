#include <chrono>
#include <numeric>

#include <gtest/gtest.h>

#include "l2rm/pipeline.hpp"

namespace {

using namespace l2rm;
using pipeline::TrainConfig;

TrainConfig quick(pipeline::Mode mode) {
  TrainConfig cfg;
  cfg.warmup_epochs = 2;
  cfg.train_epochs = 2;
  cfg.batch_size = 32;
  cfg.optimizer = pipeline::Optimizer::kAdam;
  cfg.lr_model = 1e-2;
  cfg.mode = mode;
  return cfg;
}

TEST(Batches, SplitsAndMergesTrailingSingleton) {
  std::vector<std::size_t> idx(9);
  std::iota(idx.begin(), idx.end(), 0);
  const auto b = pipeline::make_batches(idx, 4);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 5u);
  EXPECT_EQ(pipeline::make_batches(idx, 3).size(), 3u);
  EXPECT_TRUE(pipeline::make_batches({}, 4).empty());
  EXPECT_THROW(pipeline::make_batches(idx, 0), std::invalid_argument);
}

TEST(Splits, DisjointAndCover) {
  const auto ds = data::make_dataset(200, 5, 0.1, 0.4, 1);
  const auto sp = pipeline::make_splits(ds, 0.1, 7);
  EXPECT_EQ(sp.test.size(), 40u);
  EXPECT_EQ(sp.val.size(), 16u);
  EXPECT_EQ(sp.train.size() + sp.val.size() + sp.test.size(), ds.size());
  std::vector<int> seen(ds.size(), 0);
  for (const auto* part : {&sp.train, &sp.val, &sp.test})
    for (std::size_t i : *part) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(PerSampleLosses, DeterministicAndAligned) {
  const auto ds = data::make_dataset(120, 4, 0.1, 0.4, 2);
  TrainConfig cfg;
  cfg.batch_size = 16;
  const auto st = pipeline::init_state(ds, cfg);
  const auto idx = ds.indices(data::Split::kTrain);
  const auto a = pipeline::per_sample_losses(st.model, ds, idx, cfg);
  const auto b = pipeline::per_sample_losses(st.model, ds, idx, cfg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), idx.size());
  for (double l : a) EXPECT_GE(l, 0.0);
}

TEST(Warmup, ZeroEpochsGoStraightToTraining) {
  const auto ds = data::make_dataset(150, 5, 0.1, 0.4, 3);
  TrainConfig cfg = quick(pipeline::Mode::kL2rm);
  cfg.warmup_epochs = 0;
  cfg.train_epochs = 1;
  const auto out = pipeline::run_experiment(cfg, ds);
  ASSERT_EQ(out["epochs"].size(), 1u);
  EXPECT_EQ(out["epochs"][0]["phase"], "train");
}

TEST(Warmup, BeatsRandomAndSeparatesMismatchedLosses) {
  const auto ds = data::make_dataset(500, 10, 0.1, 0.4, 0);
  TrainConfig cfg = quick(pipeline::Mode::kL2rm);
  cfg.batch_size = 128;
  auto st = pipeline::init_state(ds, cfg);
  const auto sp = pipeline::make_splits(ds, cfg.val_fraction, cfg.seed);
  const double before = pipeline::evaluate(st.model, ds, sp.test).rsum;
  for (int e = 0; e < 5; ++e) pipeline::warmup_epoch(st, ds, sp.train, cfg);
  const double after = pipeline::evaluate(st.model, ds, sp.test).rsum;
  EXPECT_GT(after, before + 50.0);

  const auto losses = pipeline::per_sample_losses(st.model, ds, sp.train, cfg);
  double mis = 0.0, match = 0.0;
  int n_mis = 0, n_match = 0;
  for (std::size_t r = 0; r < sp.train.size(); ++r) {
    if (ds.m[sp.train[r]] == 0) {
      mis += losses[r];
      ++n_mis;
    } else {
      match += losses[r];
      ++n_match;
    }
  }
  EXPECT_GT(mis / n_mis, match / n_match);
}

TEST(Rematch, RefinedAlignmentsAreDistributions) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::MatrixXd s = Eigen::MatrixXd::NullaryExpr(12, 12, [&] { return u(rng); });
  for (bool masked : {true, false}) {
    for (bool partial : {true, false}) {
      TrainConfig cfg;
      cfg.positives_masked = masked;
      cfg.partial = partial;
      cfg.lambda = 0.03;
      const auto r = pipeline::rematch_batch(s, {}, cfg);
      EXPECT_NEAR(r.plan.sum(), partial ? cfg.rho : 1.0, 1e-6);
      EXPECT_TRUE((r.v2t.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
      EXPECT_TRUE((r.t2v.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
      if (masked) {
        for (Eigen::Index i = 0; i < 12; ++i) EXPECT_EQ(r.plan(i, i), 0.0);
      }
    }
  }
}

TEST(Run, CleanDataStillTrains) {
  const auto ds = data::make_dataset(200, 5, 0.1, 0.0, 5);
  const auto out = pipeline::run_experiment(quick(pipeline::Mode::kL2rm), ds);
  EXPECT_EQ(out["dataset"]["train_mismatched"], 0);
  EXPECT_GT(out["final"]["test"]["rsum"].get<double>(), 100.0);
}

TEST(Run, IdenticalConfigsGiveIdenticalPayloads) {
  const auto ds = data::make_dataset(200, 5, 0.1, 0.4, 6);
  for (auto mode : {pipeline::Mode::kNaive, pipeline::Mode::kDiscard, pipeline::Mode::kL2rm}) {
    const auto a = pipeline::run_experiment(quick(mode), ds);
    const auto b = pipeline::run_experiment(quick(mode), ds);
    EXPECT_EQ(a.dump(), b.dump()) << pipeline::mode_name(mode);
  }
}

TEST(Run, ResumeFromCheckpointMatchesUninterruptedRun) {
  const auto ds = data::make_dataset(200, 5, 0.1, 0.4, 7);
  const TrainConfig cfg = quick(pipeline::Mode::kL2rm);
  const auto full = pipeline::run_experiment(cfg, ds);

  nlohmann::json saved;
  pipeline::run_experiment(cfg, ds, nullptr, [&](const pipeline::RunState& st) {
    if (st.epoch == 3) saved = pipeline::state_to_json(st);
  });
  ASSERT_FALSE(saved.is_null());
  // Round-trip through text as a checkpoint file would.
  pipeline::RunState st = pipeline::state_from_json(nlohmann::json::parse(saved.dump()));
  const auto resumed = pipeline::run_experiment(cfg, ds, &st);
  EXPECT_EQ(full["epochs"].dump(), resumed["epochs"].dump());
  EXPECT_EQ(full["final"].dump(), resumed["final"].dump());
}

TEST(Run, AblationArmsRun) {
  const auto ds = data::make_dataset(150, 5, 0.1, 0.4, 8);
  TrainConfig base = quick(pipeline::Mode::kL2rm);
  base.warmup_epochs = 1;
  base.train_epochs = 1;
  std::vector<TrainConfig> arms(5, base);
  arms[0].learned_cost = false;
  arms[1].positives_masked = false;
  arms[2].partial = false;
  arms[3].rematch = loss::RematchKind::kKl;
  arms[4].rematch = loss::RematchKind::kCrossEntropy;
  for (const auto& cfg : arms) {
    const auto out = pipeline::run_experiment(cfg, ds);
    EXPECT_TRUE(std::isfinite(out["final"]["test"]["rsum"].get<double>()));
    EXPECT_GT(out["epochs"][1]["rematch_batches"].get<int>(), 0);
  }
  EXPECT_EQ(pipeline::run_experiment(arms[0], ds)["epochs"][1]["cost_steps"], 0);
}

TEST(Run, SmokeFinishesQuickly) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = data::make_dataset(200, 5, 0.1, 0.4, 9);
  const auto out = pipeline::run_experiment(quick(pipeline::Mode::kL2rm), ds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 30.0);
  EXPECT_EQ(out["format"], "l2rm-metrics");
  EXPECT_EQ(out["epochs"].size(), 4u);
}

TEST(Config, JsonRoundTripAndValidation) {
  TrainConfig cfg;
  cfg.rho = 0.25;
  cfg.rematch = loss::RematchKind::kKl;
  cfg.optimizer = pipeline::Optimizer::kAdam;
  const TrainConfig back = pipeline::config_from_json(pipeline::to_json(cfg));
  EXPECT_EQ(pipeline::to_json(back), pipeline::to_json(cfg));
  EXPECT_THROW(pipeline::config_from_json({{"rho", 0.0}}), std::invalid_argument);
  EXPECT_THROW(pipeline::parse_mode("bogus"), std::invalid_argument);
}

}  // namespace
