#include "l2rm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "l2rm/ot.hpp"
#include "l2rm/rng.hpp"

namespace l2rm::pipeline {
namespace {

using nlohmann::json;
using data::take_rows;

// Seed streams derived from cfg.seed.
constexpr std::uint64_t kStreamSplit = 11;
constexpr std::uint64_t kStreamInit = 21;
constexpr std::uint64_t kStreamLoop = 22;
constexpr std::uint64_t kStreamEvalBatches = 31;

double model_lr(const RunState& st, const TrainConfig& cfg) {
  return st.epoch >= cfg.lr_decay_epoch ? 0.1 * cfg.lr_model : cfg.lr_model;
}

void apply_update(RunState& st, const encoder::EncoderGrad& g, const TrainConfig& cfg) {
  const double lr = model_lr(st, cfg);
  if (cfg.optimizer == Optimizer::kAdam) {
    st.model = st.adam.step(st.model, g, lr);
  } else {
    st.model = encoder::sgd_step(st.model, g, lr);
  }
}

struct BatchView {
  Matrix v;
  Matrix t;
  encoder::Forward fwd;
};

BatchView view(const RunState& st, const data::PairDataset& ds, const std::vector<std::size_t>& img,
               const std::vector<std::size_t>& txt) {
  BatchView b{take_rows(ds.v, img), take_rows(ds.t, txt), {}};
  b.fwd = encoder::forward(st.model, b.v, b.t);
  return b;
}

template <class T>
std::vector<T> pick(const std::vector<T>& from, const std::vector<std::size_t>& pos) {
  std::vector<T> out;
  out.reserve(pos.size());
  for (std::size_t p : pos) out.push_back(from[p]);
  return out;
}

// Triplet training over shuffled batches of `ids`. Returns the mean batch loss.
double triplet_epoch(RunState& st, const data::PairDataset& ds, std::vector<std::size_t> ids,
                     const TrainConfig& cfg, int& steps) {
  if (ids.size() < 2) return 0.0;
  std::shuffle(ids.begin(), ids.end(), st.rng);
  double total = 0.0;
  const auto batches = make_batches(ids, cfg.batch_size);
  for (const auto& b : batches) {
    BatchView bv = view(st, ds, b, b);
    const loss::LossValue l = loss::triplet_batch(bv.fwd.s, cfg.alpha);
    apply_update(st, encoder::backward(bv.v, bv.t, bv.fwd, l.grad), cfg);
    total += l.value;
    ++steps;
  }
  return total / static_cast<double>(batches.size());
}

std::vector<int> feasible_ks(std::size_t n) {
  std::vector<int> ks;
  for (int k : {1, 5, 10}) {
    if (static_cast<std::size_t>(k) <= n) ks.push_back(k);
  }
  return ks;
}

json recall_json(const data::Recall& r) {
  return {{"ks", r.ks}, {"i2t", r.i2t}, {"t2i", r.t2i}, {"rsum", r.rsum}};
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
  if (warmup_epochs < 0 || train_epochs < 0) fail("epoch counts must be >= 0");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (!(rho > 0.0 && rho <= 1.0)) fail("rho must be in (0, 1]");
  if (!(lambda > 0.0)) fail("lambda must be positive");
  if (!(reserve_ratio > 0.0 && reserve_ratio <= 1.0)) fail("reserve_ratio must be in (0, 1]");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must be in (0, 1)");
  if (!(lr_model >= 0.0) || !(lr_cost > 0.0)) fail("learning rates must be positive");
  if (!(rce_weight >= 0.0)) fail("rce_weight must be >= 0");
  if (embed_dim < 2) fail("embed_dim must be >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must be in [0, 1)");
  if (sinkhorn_max_iter < 1 || !(sinkhorn_tol > 0.0)) fail("bad sinkhorn settings");
  if (bmm_iters < 1) fail("bmm_iters must be >= 1");
  loss_config().validate();
}

TrainConfig desk_scale_config() {
  TrainConfig cfg;
  cfg.optimizer = Optimizer::kAdam;
  cfg.lr_model = 1e-2;
  cfg.rho = 0.3;
  cfg.lambda = 0.03;
  return cfg;
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kL2rm: return "l2rm";
    case Mode::kNaive: return "naive";
    case Mode::kDiscard: return "discard";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "l2rm") return Mode::kL2rm;
  if (s == "naive") return Mode::kNaive;
  if (s == "discard") return Mode::kDiscard;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

std::string rematch_name(loss::RematchKind k) {
  switch (k) {
    case loss::RematchKind::kSymmetricKl: return "symmetric-kl";
    case loss::RematchKind::kKl: return "kl";
    case loss::RematchKind::kCrossEntropy: return "infonce";
  }
  return "?";
}

loss::RematchKind parse_rematch(const std::string& s) {
  if (s == "symmetric-kl") return loss::RematchKind::kSymmetricKl;
  if (s == "kl") return loss::RematchKind::kKl;
  if (s == "infonce") return loss::RematchKind::kCrossEntropy;
  throw std::invalid_argument("unknown rematch loss '" + s + "'");
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

Splits make_splits(const data::PairDataset& ds, double val_fraction, std::uint64_t seed) {
  Splits sp;
  sp.test = ds.indices(data::Split::kTest);
  std::vector<std::size_t> pool = ds.indices(data::Split::kTrain);
  std::mt19937_64 rng(derive_seed(seed, kStreamSplit));
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool.size())));
  sp.val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  sp.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  std::sort(sp.val.begin(), sp.val.end());
  std::sort(sp.train.begin(), sp.train.end());
  return sp;
}

RunState init_state(const data::PairDataset& ds, const TrainConfig& cfg) {
  RunState st;
  st.model = encoder::EncoderParams::random(ds.v.cols(), ds.t.cols(), cfg.embed_dim,
                                            derive_seed(cfg.seed, kStreamInit));
  st.rng.seed(derive_seed(cfg.seed, kStreamLoop));
  st.best_model = st.model;
  st.best_theta = st.theta;
  return st;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& idx, int size) {
  if (size < 1) throw std::invalid_argument("make_batches: size must be >= 1");
  std::vector<std::vector<std::size_t>> out;
  const auto bs = static_cast<std::size_t>(size);
  for (std::size_t start = 0; start < idx.size(); start += bs) {
    const std::size_t end = std::min(idx.size(), start + bs);
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                     idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (out.size() >= 2 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

std::vector<double> per_sample_losses(const encoder::EncoderParams& model,
                                      const data::PairDataset& ds,
                                      const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  if (idx.size() < 2) throw std::invalid_argument("per_sample_losses: need at least two pairs");
  std::vector<std::size_t> order(idx.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(cfg.seed, kStreamEvalBatches));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> out(idx.size(), 0.0);
  for (const auto& batch : make_batches(order, cfg.batch_size)) {
    const std::vector<std::size_t> ids = pick(idx, batch);
    const Matrix s = encoder::similarity(model, take_rows(ds.v, ids), take_rows(ds.t, ids));
    const Eigen::VectorXd l = loss::triplet_per_pair(s, cfg.alpha);
    for (std::size_t r = 0; r < batch.size(); ++r) out[batch[r]] = l[static_cast<Eigen::Index>(r)];
  }
  return out;
}

double warmup_epoch(RunState& st, const data::PairDataset& ds, const std::vector<std::size_t>& train,
                    const TrainConfig& cfg) {
  std::vector<std::size_t> ids = train;
  std::shuffle(ids.begin(), ids.end(), st.rng);
  const auto batches = make_batches(ids, cfg.batch_size);
  double total = 0.0;
  for (const auto& b : batches) {
    BatchView bv = view(st, ds, b, b);
    const loss::LossValue nce = loss::infonce_loss(bv.fwd.s, cfg.tau);
    const loss::LossValue rce = loss::rce_loss(bv.fwd.s, cfg.tau, cfg.eps);
    const Matrix grad = nce.grad + cfg.rce_weight * rce.grad;
    apply_update(st, encoder::backward(bv.v, bv.t, bv.fwd, grad), cfg);
    total += nce.value + cfg.rce_weight * rce.value;
  }
  return batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
}

Rematch rematch_batch(const Matrix& s, const cost::CostNetParams& theta, const TrainConfig& cfg) {
  const Eigen::Index n = s.rows();
  const Matrix c = cfg.learned_cost ? cost::cost_forward(s, theta) : Matrix(1.0 - s.array());
  const ot::MaskMatrix mask = cfg.positives_masked ? ot::MaskMatrix::off_diagonal(n)
                                                   : ot::MaskMatrix::all_ones(n, n);
  const ot::Measure uniform = ot::Measure::uniform(n);
  ot::SinkhornConfig sc;
  sc.lambda = cfg.lambda;
  sc.max_iter = cfg.sinkhorn_max_iter;
  sc.tol = cfg.sinkhorn_tol;
  const double rho = cfg.partial ? cfg.rho : 1.0;
  const ot::TransportPlan tp = ot::partial_ot(ot::CostMatrix(c), uniform, uniform, mask, rho, sc);
  Rematch out;
  out.plan = tp.plan;
  out.converged = tp.converged;
  out.v2t = ot::normalize_plan(tp.plan, mask, ot::Direction::kRow);
  out.t2v = ot::normalize_plan(tp.plan, mask, ot::Direction::kColumn);
  return out;
}

EpochStats train_epoch(RunState& st, const data::PairDataset& ds,
                       const std::vector<std::size_t>& train, const TrainConfig& cfg) {
  EpochStats stats;
  if (cfg.mode == Mode::kNaive) {
    stats.loss = triplet_epoch(st, ds, train, cfg, stats.steps);
    return stats;
  }

  // Identification on the model as it stands at epoch entry.
  const std::vector<double> losses = per_sample_losses(st.model, ds, train, cfg);
  st.bmm = mixture::fit_bmm(losses, cfg.bmm_iters);
  const mixture::Partition part = mixture::partition(mixture::posteriors(*st.bmm, losses), cfg.threshold);
  std::vector<std::size_t> d_m = pick(train, part.matched);
  std::vector<std::size_t> d_mis = pick(train, part.mismatched);
  st.n_matched = d_m.size();
  st.n_mismatched = d_mis.size();
  stats.predicted_mismatched = d_mis;

  if (cfg.mode == Mode::kDiscard) {
    stats.loss = triplet_epoch(st, ds, d_m, cfg, stats.steps);
    return stats;
  }

  std::shuffle(d_m.begin(), d_m.end(), st.rng);
  std::shuffle(d_mis.begin(), d_mis.end(), st.rng);
  const auto matched_batches = make_batches(d_m, cfg.batch_size);
  const std::size_t mis_size = std::min<std::size_t>(d_mis.size(), static_cast<std::size_t>(cfg.batch_size));
  std::size_t cursor = 0;
  double total = 0.0, cost_total = 0.0;
  const loss::LossConfig lc = cfg.loss_config();

  for (const auto& mb : matched_batches) {
    // (a) cost function update on a reconstructed batch.
    if (cfg.learned_cost) {
      std::size_t k = mb.size();
      auto substituted = [&](std::size_t kk) {
        return kk - static_cast<std::size_t>(std::floor(cfg.reserve_ratio * static_cast<double>(kk) + 0.5));
      };
      while (k > 1 && substituted(k) > d_mis.size()) --k;
      if (substituted(k) <= d_mis.size()) {
        const std::vector<std::size_t> head(mb.begin(), mb.begin() + static_cast<std::ptrdiff_t>(k));
        cost::ReconstructedBatch rb = cost::reconstruct_pairs(head, d_mis, cfg.reserve_ratio, st.rng());
        rb.sims = encoder::similarity(st.model, take_rows(ds.v, rb.image_ids), take_rows(ds.t, rb.text_ids));
        const cost::CostStepResult res = cost::cost_net_step(st.theta, rb, cfg.lr_cost);
        st.theta = res.theta;
        st.cost_clamped = st.cost_clamped || res.clamped;
        cost_total += res.loss_before;
        ++stats.cost_steps;
      }
    }

    // (b) rematching on a mismatched batch.
    std::optional<BatchView> mis_view;
    Rematch rem;
    if (mis_size >= 2) {
      if (cursor + mis_size > d_mis.size()) {
        std::shuffle(d_mis.begin(), d_mis.end(), st.rng);
        cursor = 0;
      }
      const std::vector<std::size_t> ids(d_mis.begin() + static_cast<std::ptrdiff_t>(cursor),
                                         d_mis.begin() + static_cast<std::ptrdiff_t>(cursor + mis_size));
      cursor += mis_size;
      mis_view = view(st, ds, ids, ids);
      rem = rematch_batch(mis_view->fwd.s, st.theta, cfg);
      if (!rem.converged) ++stats.sinkhorn_unconverged;
      ++stats.rematch_batches;
    }

    // (c) model update on the final objective.
    std::optional<BatchView> m_view;
    if (mb.size() >= 2) m_view = view(st, ds, mb, mb);
    const Matrix empty(0, 0);
    const loss::FinalLoss fl =
        loss::final_loss(m_view ? m_view->fwd.s : empty, mis_view ? mis_view->fwd.s : empty,
                         mis_view ? rem.v2t : empty, mis_view ? rem.t2v : empty, lc, cfg.rematch);
    encoder::EncoderGrad g = encoder::EncoderGrad::zeros_like(st.model);
    if (m_view) g += encoder::backward(m_view->v, m_view->t, m_view->fwd, fl.grad_matched);
    if (mis_view) g += encoder::backward(mis_view->v, mis_view->t, mis_view->fwd, fl.grad_mismatched);
    apply_update(st, g, cfg);
    total += fl.value;
    ++stats.steps;
  }
  if (stats.steps > 0) stats.loss = total / stats.steps;
  if (stats.cost_steps > 0) stats.mean_cost_loss = cost_total / stats.cost_steps;
  return stats;
}

double mean_pair_cost(const encoder::EncoderParams& model, const cost::CostNetParams& theta,
                      const data::PairDataset& ds, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  const encoder::Forward f = encoder::forward(model, take_rows(ds.v, idx), take_rows(ds.t, idx));
  const Eigen::VectorXd diag = f.u_v.cwiseProduct(f.u_t).rowwise().sum();
  return cost::cost_forward(diag, theta).mean();
}

data::Recall evaluate(const encoder::EncoderParams& model, const data::PairDataset& ds,
                      const std::vector<std::size_t>& idx) {
  const Matrix s = encoder::similarity(model, take_rows(ds.v, idx), take_rows(ds.t, idx));
  return data::recall_at_k(s, feasible_ks(idx.size()));
}

json run_experiment(const TrainConfig& cfg, const data::PairDataset& ds, RunState* resume,
                    const EpochHook& hook) {
  cfg.validate();
  ds.validate();
  const Splits sp = make_splits(ds, cfg.val_fraction, cfg.seed);
  if (sp.train.size() < 10) throw std::invalid_argument("run_experiment: fewer than 10 training pairs");
  if (sp.test.empty()) throw std::invalid_argument("run_experiment: dataset has no test split");

  RunState fresh;
  if (resume == nullptr) fresh = init_state(ds, cfg);
  RunState& st = resume != nullptr ? *resume : fresh;

  std::vector<std::size_t> true_mis, true_match;
  for (std::size_t i : sp.train) (ds.m[i] == 0 ? true_mis : true_match).push_back(i);
  std::vector<bool> is_mismatched(ds.size(), false);
  for (std::size_t i : true_mis) is_mismatched[i] = true;

  const int total_epochs = cfg.warmup_epochs + cfg.train_epochs;
  while (st.epoch < total_epochs) {
    json rec;
    rec["epoch"] = st.epoch + 1;
    rec["lr_model"] = model_lr(st, cfg);
    if (st.epoch < cfg.warmup_epochs) {
      rec["phase"] = "warmup";
      if (cfg.mode == Mode::kNaive) {
        int steps = 0;
        rec["loss"] = triplet_epoch(st, ds, sp.train, cfg, steps);
      } else {
        rec["loss"] = warmup_epoch(st, ds, sp.train, cfg);
      }
    } else {
      rec["phase"] = "train";
      const EpochStats es = train_epoch(st, ds, sp.train, cfg);
      rec["loss"] = es.loss;
      rec["steps"] = es.steps;
      if (cfg.mode != Mode::kNaive) {
        const auto& b = st.bmm->mixture;
        rec["bmm"] = {{"alpha_lo", b.alpha_lo}, {"beta_lo", b.beta_lo}, {"alpha_hi", b.alpha_hi},
                      {"beta_hi", b.beta_hi},   {"weight_hi", b.weight_hi}, {"degenerate", b.degenerate},
                      {"em_iterations", st.bmm->iterations}, {"single_component", st.bmm->single_component}};
        rec["partition"] = {{"matched", st.n_matched}, {"mismatched", st.n_mismatched}};
        const data::Identification id = data::identification_score(es.predicted_mismatched, is_mismatched);
        rec["identification"] = {{"precision", id.precision}, {"recall", id.recall}, {"f1", id.f1}};
      }
      if (cfg.mode == Mode::kL2rm) {
        rec["rematch_batches"] = es.rematch_batches;
        rec["sinkhorn_unconverged"] = es.sinkhorn_unconverged;
        rec["cost_steps"] = es.cost_steps;
        rec["cost_loss"] = es.mean_cost_loss;
      }
    }
    const double c_mis = mean_pair_cost(st.model, st.theta, ds, true_mis);
    const double c_match = mean_pair_cost(st.model, st.theta, ds, true_match);
    rec["cost"] = {{"mismatched", c_mis}, {"matched", c_match}, {"gap", c_mis - c_match},
                   {"w", st.theta.w}, {"b", st.theta.b}, {"clamped", st.cost_clamped}};

    ++st.epoch;
    if (!sp.val.empty()) {
      const data::Recall val = evaluate(st.model, ds, sp.val);
      rec["val_rsum"] = val.rsum;
      if (val.rsum > st.best_val_rsum) {
        st.best_val_rsum = val.rsum;
        st.best_epoch = st.epoch;
        st.best_model = st.model;
        st.best_theta = st.theta;
      }
    } else {
      st.best_epoch = st.epoch;
      st.best_model = st.model;
      st.best_theta = st.theta;
    }
    st.history.push_back(std::move(rec));
    if (hook) hook(st);
  }

  const data::Recall test = evaluate(st.best_model, ds, sp.test);
  const data::Recall last = evaluate(st.model, ds, sp.test);
  json dataset = {{"n", ds.size()},
                  {"classes", ds.classes},
                  {"noise", ds.noise},
                  {"mrate", ds.mrate},
                  {"seed", ds.seed},
                  {"n_train", sp.train.size()},
                  {"n_val", sp.val.size()},
                  {"n_test", sp.test.size()},
                  {"train_mismatched", true_mis.size()}};
  std::size_t collisions = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) collisions += ds.permuted[i] && ds.m[i] == 1 ? 1 : 0;
  dataset["same_class_collisions"] = collisions;

  json final_block = {{"best_epoch", st.best_epoch},
                      {"best_val_rsum", st.best_val_rsum},
                      {"test", recall_json(test)},
                      {"last_epoch_test", recall_json(last)}};
  return {{"format", "l2rm-metrics"}, {"version", 1},        {"config", to_json(cfg)},
          {"dataset", dataset},       {"epochs", st.history}, {"final", final_block}};
}

}  // namespace l2rm::pipeline
