#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "l2rm/datagen.hpp"
#include "l2rm/io.hpp"
#include "l2rm/ot.hpp"
#include "l2rm/pipeline.hpp"
#include "l2rm/rng.hpp"

namespace l2rm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::TrainConfig;

// Help tags: (method) marks a setting of the published method, (artifact) a
// choice made for this implementation.
constexpr const char* kMethod = " (method)";
constexpr const char* kArtifact = " (artifact)";

fs::path default_output(const std::string& name) {
  const char* dir = std::getenv("L2RM_OUT_DIR");
  return fs::path(dir != nullptr && *dir != '\0' ? dir : ".") / name;
}

template <class T>
std::string with_default(const std::string& text, const T& value, const char* tag) {
  std::ostringstream os;
  os << text << " [default " << value << "]" << tag;
  return os.str();
}

// Flags that override a preset / config file only when given.
struct Overrides {
  std::string preset = "stock";
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> warmup_epochs, train_epochs, lr_decay_epoch, batch_size, embed_dim,
      sinkhorn_max_iter, bmm_iters;
  std::optional<double> alpha, tau, eps, rho, lambda, gamma, reserve_ratio, threshold, lr_model,
      lr_cost, rce_weight, val_fraction, sinkhorn_tol;
  std::optional<std::string> mode, optimizer, rematch;
  bool no_cost = false, no_mask = false, no_partial = false;
};

void add_config_flags(CLI::App& app, Overrides& o, bool with_mode, bool with_arms) {
  const TrainConfig d;
  app.add_option("--preset", o.preset,
                 "starting values: 'stock' (method defaults) or 'desk' (Adam, lr 1e-2, rho 0.3, "
                 "lambda 0.03, tuned for the synthetic benchmark) [default stock]" +
                     std::string(kArtifact))
      ->check(CLI::IsMember({"stock", "desk"}));
  app.add_option("--config", o.config_file,
                 "JSON file with a config object, or a metrics file whose 'config' is reused; "
                 "applied after --preset, before explicit flags" + std::string(kArtifact))
      ->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, with_default("training seed", d.seed, kArtifact));
  if (with_mode) {
    app.add_option("--mode", o.mode,
                   with_default("l2rm | naive (triplet on all pairs) | discard (train on the "
                                "identified matched subset)", "l2rm", kArtifact))
        ->check(CLI::IsMember({"l2rm", "naive", "discard"}));
  }
  app.add_option("--warmup-epochs", o.warmup_epochs, with_default("warm-up epochs", d.warmup_epochs, kMethod));
  app.add_option("--train-epochs", o.train_epochs, with_default("epochs after warm-up", d.train_epochs, kMethod));
  app.add_option("--lr-decay-epoch", o.lr_decay_epoch,
                 with_default("epoch after which the model lr drops tenfold", d.lr_decay_epoch, kMethod));
  app.add_option("--batch-size", o.batch_size, with_default("batch size", d.batch_size, kMethod));
  app.add_option("--alpha", o.alpha, with_default("triplet margin", d.alpha, kMethod));
  app.add_option("--tau", o.tau, with_default("softmax temperature", d.tau, kMethod));
  app.add_option("--eps", o.eps, with_default("label bound of the reverse cross-entropy", d.eps, kMethod));
  app.add_option("--rho", o.rho, with_default("transported mass of the partial OT", d.rho, kMethod));
  app.add_option("--lambda", o.lambda, with_default("entropic regularization", d.lambda, kArtifact));
  app.add_option("--gamma", o.gamma, with_default("label-smoothing strength (reported only)", d.gamma, kMethod));
  app.add_option("--reserve-ratio", o.reserve_ratio,
                 with_default("fraction of a matched batch kept when rebuilding pairs for the cost step",
                              d.reserve_ratio, kArtifact));
  app.add_option("--threshold", o.threshold, with_default("mismatch posterior threshold", d.threshold, kMethod));
  app.add_option("--lr-model", o.lr_model, with_default("encoder learning rate", d.lr_model, kMethod));
  app.add_option("--lr-cost", o.lr_cost, with_default("cost-function learning rate", d.lr_cost, kMethod));
  app.add_option("--rce-weight", o.rce_weight, with_default("weight of the warm-up RCE term", d.rce_weight, kMethod));
  app.add_option("--optimizer", o.optimizer, with_default("sgd | adam", "sgd", kArtifact))
      ->check(CLI::IsMember({"sgd", "adam"}));
  app.add_option("--embed-dim", o.embed_dim, with_default("shared embedding width", d.embed_dim, kArtifact));
  app.add_option("--val-fraction", o.val_fraction,
                 with_default("share of training pairs held out for checkpoint selection", d.val_fraction, kArtifact));
  app.add_option("--sinkhorn-max-iter", o.sinkhorn_max_iter,
                 with_default("Sinkhorn sweeps before polishing", d.sinkhorn_max_iter, kArtifact));
  app.add_option("--sinkhorn-tol", o.sinkhorn_tol, with_default("Sinkhorn marginal tolerance", d.sinkhorn_tol, kArtifact));
  app.add_option("--bmm-iters", o.bmm_iters, with_default("EM iterations of the beta mixture", d.bmm_iters, kArtifact));
  if (!with_arms) {
    app.add_option("--rematch", o.rematch, with_default("symmetric-kl | kl | infonce", "symmetric-kl", kMethod))
        ->check(CLI::IsMember({"symmetric-kl", "kl", "infonce"}));
    app.add_flag("--no-cost", o.no_cost, "use 1 - S as the cost instead of the learned cost" + std::string(kMethod));
    app.add_flag("--no-mask", o.no_mask, "allow transport onto the given pairs" + std::string(kMethod));
    app.add_flag("--no-partial", o.no_partial, "transport the full mass (rho = 1)" + std::string(kMethod));
  }
}

TrainConfig resolve(const Overrides& o) {
  TrainConfig c = o.preset == "desk" ? pipeline::desk_scale_config() : TrainConfig{};
  if (!o.config_file.empty()) {
    const json j = io::read_json(o.config_file);
    json merged = pipeline::to_json(c);
    merged.update(j.contains("config") ? j.at("config") : j);
    c = pipeline::config_from_json(merged);
  }
  auto set = [](auto& field, const auto& opt) {
    if (opt) field = *opt;
  };
  set(c.seed, o.seed);
  set(c.warmup_epochs, o.warmup_epochs);
  set(c.train_epochs, o.train_epochs);
  set(c.lr_decay_epoch, o.lr_decay_epoch);
  set(c.batch_size, o.batch_size);
  set(c.embed_dim, o.embed_dim);
  set(c.sinkhorn_max_iter, o.sinkhorn_max_iter);
  set(c.bmm_iters, o.bmm_iters);
  set(c.alpha, o.alpha);
  set(c.tau, o.tau);
  set(c.eps, o.eps);
  set(c.rho, o.rho);
  set(c.lambda, o.lambda);
  set(c.gamma, o.gamma);
  set(c.reserve_ratio, o.reserve_ratio);
  set(c.threshold, o.threshold);
  set(c.lr_model, o.lr_model);
  set(c.lr_cost, o.lr_cost);
  set(c.rce_weight, o.rce_weight);
  set(c.val_fraction, o.val_fraction);
  set(c.sinkhorn_tol, o.sinkhorn_tol);
  if (o.mode) c.mode = pipeline::parse_mode(*o.mode);
  if (o.optimizer) c.optimizer = pipeline::parse_optimizer(*o.optimizer);
  if (o.rematch) c.rematch = pipeline::parse_rematch(*o.rematch);
  if (o.no_cost) c.learned_cost = false;
  if (o.no_mask) c.positives_masked = false;
  if (o.no_partial) c.partial = false;
  c.validate();
  return c;
}

void apply_arm(TrainConfig& c, const std::string& arm) {
  c.mode = pipeline::Mode::kL2rm;
  if (arm == "no-cost") c.learned_cost = false;
  else if (arm == "no-mask") c.positives_masked = false;
  else if (arm == "no-partial") c.partial = false;
  else if (arm == "kl") c.rematch = loss::RematchKind::kKl;
  else if (arm == "infonce") c.rematch = loss::RematchKind::kCrossEntropy;
}

data::PairDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return data::read_jsonl(in);
}

struct RunFiles {
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string resume;
};

void add_run_files(CLI::App& app, RunFiles& f) {
  app.add_option("--data", f.data, "dataset file written by 'gen'")->required()->check(CLI::ExistingFile);
  app.add_option("--out", f.out, "metrics file [default $L2RM_OUT_DIR/run.json, else ./run.json]");
  app.add_option("--checkpoint", f.checkpoint, "rewrite this training-state file after every epoch");
  app.add_option("--resume", f.resume, "continue from a training-state file")->check(CLI::ExistingFile);
}

int do_train(const TrainConfig& cfg, const RunFiles& f, std::ostream& out) {
  const data::PairDataset ds = load_dataset(f.data);
  std::optional<pipeline::RunState> resumed;
  if (!f.resume.empty()) resumed = pipeline::state_from_json(io::read_json(f.resume));
  pipeline::EpochHook hook;
  if (!f.checkpoint.empty()) {
    hook = [&](const pipeline::RunState& st) {
      io::atomic_write(f.checkpoint, pipeline::state_to_json(st).dump() + "\n");
    };
  }
  const json metrics = pipeline::run_experiment(cfg, ds, resumed ? &*resumed : nullptr, hook);
  const fs::path path = f.out.empty() ? default_output("run.json") : fs::path(f.out);
  io::atomic_write(path, metrics.dump(2) + "\n");
  out << path.string() << "\n";
  return 0;
}

struct OracleOptions {
  int instances = 100;
  int size = 4;
  double lambda = 0.001;
  std::uint64_t seed = 0;
};

// Random uniform-cost instances solved by Sinkhorn and by min-cost flow.
json oracle_check(const OracleOptions& o) {
  if (o.instances < 1 || o.size < 1 || o.size > 16) {
    throw std::invalid_argument("oracle-check: need instances >= 1 and 1 <= size <= 16");
  }
  ot::SinkhornConfig sc;
  sc.lambda = o.lambda;
  const Eigen::Index n = o.size;
  const ot::Measure u = ot::Measure::uniform(n);
  const ot::MaskMatrix mask = ot::MaskMatrix::all_ones(n, n);
  double max_gap = 0.0, max_marginal = 0.0;
  int unconverged = 0;
  for (int k = 0; k < o.instances; ++k) {
    std::mt19937_64 rng(derive_seed(o.seed, static_cast<std::uint64_t>(k)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const ot::CostMatrix cost(Eigen::MatrixXd::NullaryExpr(n, n, [&] { return unif(rng); }));
    const ot::TransportPlan plan = ot::sinkhorn(cost, u, u, mask, sc);
    const double exact = ot::transport_cost(ot::exact_ot_oracle(cost, u, u, mask, n).plan, cost);
    const double approx = ot::transport_cost(plan.plan, cost);
    max_gap = std::max(max_gap, std::abs(approx - exact) / std::max(exact, 1e-12));
    max_marginal = std::max(max_marginal, plan.marginal_error);
    unconverged += plan.converged ? 0 : 1;
  }
  return {{"instances", o.instances}, {"size", o.size},
          {"lambda", o.lambda},       {"seed", o.seed},
          {"max_relative_gap", max_gap}, {"max_marginal_error", max_marginal},
          {"unconverged", unconverged}, {"pass", max_gap < 1e-3}};
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Noisy-correspondence retrieval with learned partial-OT rematching", "l2rm"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  struct GenOptions {
    std::size_t n = 500;
    int classes = 10;
    double noise = 0.1;
    double mrate = 0.4;
    std::uint64_t seed = 0;
    double test_fraction = 0.2;
    std::string out;
  } gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "write a synthetic paired dataset");
  gen_cmd->add_option("--n", gen.n, with_default("number of pairs", gen.n, kArtifact));
  gen_cmd->add_option("--classes", gen.classes, with_default("latent classes", gen.classes, kArtifact));
  gen_cmd->add_option("--noise", gen.noise, with_default("feature noise standard deviation", gen.noise, kArtifact));
  gen_cmd->add_option("--mrate", gen.mrate,
                      with_default("fraction of training captions permuted", gen.mrate, kMethod));
  gen_cmd->add_option("--seed", gen.seed, with_default("dataset seed", gen.seed, kArtifact));
  gen_cmd->add_option("--test-fraction", gen.test_fraction,
                      with_default("clean held-out share", gen.test_fraction, kArtifact));
  gen_cmd->add_option("--out", gen.out, "dataset file [default $L2RM_OUT_DIR/dataset.jsonl, else ./dataset.jsonl]");

  Overrides train_ov;
  RunFiles train_files;
  CLI::App* train_cmd = app.add_subcommand("train", "train one model and write its metrics");
  add_run_files(*train_cmd, train_files);
  add_config_flags(*train_cmd, train_ov, true, false);

  Overrides ablate_ov;
  RunFiles ablate_files;
  std::string arm;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train one ablated variant of the full method");
  ablate_cmd->add_option("--arm", arm,
                         "no-cost (1 - S cost) | no-mask (diagonal allowed) | no-partial (full mass) | "
                         "kl | infonce (rematching loss)" + std::string(kMethod))
      ->required()
      ->check(CLI::IsMember({"no-cost", "no-mask", "no-partial", "kl", "infonce"}));
  add_run_files(*ablate_cmd, ablate_files);
  add_config_flags(*ablate_cmd, ablate_ov, false, true);

  std::string eval_data, eval_state, eval_which = "best";
  CLI::App* eval_cmd = app.add_subcommand("eval", "recall@K of a saved training state on the test split");
  eval_cmd->add_option("--data", eval_data, "dataset file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", eval_state, "training-state file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--which", eval_which, "best (validation-selected) | last [default best]" + std::string(kArtifact))
      ->check(CLI::IsMember({"best", "last"}));

  OracleOptions oracle;
  CLI::App* oracle_cmd = app.add_subcommand("oracle-check", "compare Sinkhorn against exact min-cost flow");
  oracle_cmd->add_option("--instances", oracle.instances, with_default("random instances", oracle.instances, kArtifact));
  oracle_cmd->add_option("--size", oracle.size, with_default("instance side length", oracle.size, kArtifact));
  oracle_cmd->add_option("--lambda", oracle.lambda, with_default("entropic regularization", oracle.lambda, kArtifact));
  oracle_cmd->add_option("--seed", oracle.seed, with_default("instance seed", oracle.seed, kArtifact));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen_cmd) {
      std::ostringstream os;
      data::write_jsonl(data::make_dataset(gen.n, gen.classes, gen.noise, gen.mrate, gen.seed, gen.test_fraction), os);
      const fs::path path = gen.out.empty() ? default_output("dataset.jsonl") : fs::path(gen.out);
      io::atomic_write(path, os.str());
      out << path.string() << "\n";
      return 0;
    }
    if (*train_cmd) return do_train(resolve(train_ov), train_files, out);
    if (*ablate_cmd) {
      TrainConfig cfg = resolve(ablate_ov);
      apply_arm(cfg, arm);
      return do_train(cfg, ablate_files, out);
    }
    if (*eval_cmd) {
      const data::PairDataset ds = load_dataset(eval_data);
      const pipeline::RunState st = pipeline::state_from_json(io::read_json(eval_state));
      const auto& model = eval_which == "best" ? st.best_model : st.model;
      const data::Recall r = pipeline::evaluate(model, ds, ds.indices(data::Split::kTest));
      out << json{{"which", eval_which}, {"epoch", eval_which == "best" ? st.best_epoch : st.epoch},
                  {"ks", r.ks}, {"i2t", r.i2t}, {"t2i", r.t2i}, {"rsum", r.rsum}}.dump() << "\n";
      return 0;
    }
    if (*oracle_cmd) {
      const json report = oracle_check(oracle);
      out << report.dump() << "\n";
      if (!report["pass"].get<bool>()) {
        err << "oracle-check: max relative gap " << report["max_relative_gap"].get<double>() << " >= 1e-3\n";
        return 1;
      }
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace l2rm::cli
