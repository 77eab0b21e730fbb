#pragma once

// The training loop: warm-up, per-epoch mismatch identification, cost
// updates, partial-OT rematching and final-objective model updates, plus the
// two baselines it is compared against.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "l2rm/cost_learner.hpp"
#include "l2rm/datagen.hpp"
#include "l2rm/encoder.hpp"
#include "l2rm/losses.hpp"
#include "l2rm/mixture.hpp"

namespace l2rm::pipeline {

using Matrix = Eigen::MatrixXd;

enum class Mode {
  kL2rm,     // full method
  kNaive,    // triplet loss on every training pair, no warm-up phase
  kDiscard,  // warm-up, then triplet loss on the identified matched subset only
};

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  int warmup_epochs = 5;
  int train_epochs = 35;
  int lr_decay_epoch = 15;
  int batch_size = 128;

  double alpha = 0.2;
  double tau = 0.05;
  double eps = 1e-7;
  double rho = 0.1;
  double lambda = 0.01;
  double gamma = 0.1;
  double reserve_ratio = 0.5;
  double threshold = 0.5;
  double lr_model = 2e-4;
  double lr_cost = 2e-6;
  double rce_weight = 1.0;
  Optimizer optimizer = Optimizer::kSgd;

  int embed_dim = 16;
  double val_fraction = 0.1;
  int sinkhorn_max_iter = 1000;
  double sinkhorn_tol = 1e-9;
  int bmm_iters = 100;

  Mode mode = Mode::kL2rm;
  bool learned_cost = true;
  bool positives_masked = true;
  bool partial = true;
  loss::RematchKind rematch = loss::RematchKind::kSymmetricKl;

  std::uint64_t seed = 0;

  void validate() const;
  loss::LossConfig loss_config() const { return {alpha, tau, eps, gamma}; }
};

/// Settings tuned for the synthetic benchmark (N≈500, 16-d embeddings): the
/// stock learning rate barely moves a linear encoder in 40 epochs, so this
/// preset switches to Adam at 1e-2 with ρ = 0.3 and λ = 0.03, picked on
/// seeds 100-119.
TrainConfig desk_scale_config();

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);
std::string rematch_name(loss::RematchKind k);
loss::RematchKind parse_rematch(const std::string& s);
std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

/// Train / validation / test positions into a dataset.
struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// The clean test split comes from the dataset; val_fraction of the remaining
/// (corrupted) pool is held out for checkpoint selection.
Splits make_splits(const data::PairDataset& ds, double val_fraction, std::uint64_t seed);

struct RunState {
  encoder::EncoderParams model;
  cost::CostNetParams theta;
  encoder::Adam adam;
  std::mt19937_64 rng;
  int epoch = 0;  // epochs completed
  std::optional<mixture::BmmFit> bmm;
  std::size_t n_matched = 0;
  std::size_t n_mismatched = 0;
  bool cost_clamped = false;
  nlohmann::json history = nlohmann::json::array();

  // Best validation checkpoint.
  double best_val_rsum = -1.0;
  int best_epoch = -1;
  encoder::EncoderParams best_model;
  cost::CostNetParams best_theta;
};

RunState init_state(const data::PairDataset& ds, const TrainConfig& cfg);

nlohmann::json state_to_json(const RunState& st);
RunState state_from_json(const nlohmann::json& j);

/// Triplet loss of every position in `idx`, hardest negatives mined inside
/// fixed-seed batches of cfg.batch_size. A trailing batch of one joins the
/// batch before it. Output is aligned with `idx`.
std::vector<double> per_sample_losses(const encoder::EncoderParams& model,
                                      const data::PairDataset& ds,
                                      const std::vector<std::size_t>& idx, const TrainConfig& cfg);

/// Splits idx into consecutive batches of `size`, merging a trailing batch of
/// one into its predecessor.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& idx, int size);

/// One warm-up epoch (InfoNCE + weighted RCE) over `train`.
double warmup_epoch(RunState& st, const data::PairDataset& ds, const std::vector<std::size_t>& train,
                    const TrainConfig& cfg);

struct EpochStats {
  double loss = 0.0;
  int steps = 0;
  int rematch_batches = 0;
  int sinkhorn_unconverged = 0;
  int cost_steps = 0;
  double mean_cost_loss = 0.0;
  std::vector<std::size_t> predicted_mismatched;  // dataset indices
};

/// One post-warm-up epoch in the configured mode.
EpochStats train_epoch(RunState& st, const data::PairDataset& ds,
                       const std::vector<std::size_t>& train, const TrainConfig& cfg);

/// Refined alignments for one mismatched batch given its similarities.
struct Rematch {
  Matrix plan;
  Matrix v2t;
  Matrix t2v;
  bool converged = false;
};
Rematch rematch_batch(const Matrix& s, const cost::CostNetParams& theta, const TrainConfig& cfg);

/// Mean learned cost f_c(s_ii) over the given pairs' own similarities.
double mean_pair_cost(const encoder::EncoderParams& model, const cost::CostNetParams& theta,
                      const data::PairDataset& ds, const std::vector<std::size_t>& idx);

data::Recall evaluate(const encoder::EncoderParams& model, const data::PairDataset& ds,
                      const std::vector<std::size_t>& idx);

/// Called after every epoch with the state; used to checkpoint.
using EpochHook = std::function<void(const RunState&)>;

/// Full run from `st` (fresh or resumed) to the configured epoch count.
/// Returns the metrics document: config echo, per-epoch records, final test
/// block from the best validation checkpoint.
nlohmann::json run_experiment(const TrainConfig& cfg, const data::PairDataset& ds,
                              RunState* resume = nullptr, const EpochHook& hook = {});

}  // namespace l2rm::pipeline
