// Serialization of configs and run state, and file helpers.

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "l2rm/io.hpp"
#include "l2rm/pipeline.hpp"

namespace l2rm {
namespace io {

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace io

namespace pipeline {
namespace {

using nlohmann::json;

json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw std::runtime_error("matrix: size mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
  }
  return m;
}

json params_json(const encoder::EncoderParams& p) { return {{"w_v", matrix_json(p.w_v)}, {"w_t", matrix_json(p.w_t)}}; }

encoder::EncoderParams params_from(const json& j) {
  return {matrix_from(j.at("w_v")), matrix_from(j.at("w_t"))};
}

json theta_json(const cost::CostNetParams& t) { return {{"w", t.w}, {"b", t.b}}; }

cost::CostNetParams theta_from(const json& j) { return {j.at("w").get<double>(), j.at("b").get<double>()}; }

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"warmup_epochs", c.warmup_epochs},
          {"train_epochs", c.train_epochs},
          {"lr_decay_epoch", c.lr_decay_epoch},
          {"batch_size", c.batch_size},
          {"alpha", c.alpha},
          {"tau", c.tau},
          {"eps", c.eps},
          {"rho", c.rho},
          {"lambda", c.lambda},
          {"gamma", c.gamma},
          {"reserve_ratio", c.reserve_ratio},
          {"threshold", c.threshold},
          {"lr_model", c.lr_model},
          {"lr_cost", c.lr_cost},
          {"rce_weight", c.rce_weight},
          {"optimizer", optimizer_name(c.optimizer)},
          {"embed_dim", c.embed_dim},
          {"val_fraction", c.val_fraction},
          {"sinkhorn_max_iter", c.sinkhorn_max_iter},
          {"sinkhorn_tol", c.sinkhorn_tol},
          {"bmm_iters", c.bmm_iters},
          {"mode", mode_name(c.mode)},
          {"learned_cost", c.learned_cost},
          {"positives_masked", c.positives_masked},
          {"partial", c.partial},
          {"rematch", rematch_name(c.rematch)},
          {"seed", c.seed}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("warmup_epochs", c.warmup_epochs);
  get("train_epochs", c.train_epochs);
  get("lr_decay_epoch", c.lr_decay_epoch);
  get("batch_size", c.batch_size);
  get("alpha", c.alpha);
  get("tau", c.tau);
  get("eps", c.eps);
  get("rho", c.rho);
  get("lambda", c.lambda);
  get("gamma", c.gamma);
  get("reserve_ratio", c.reserve_ratio);
  get("threshold", c.threshold);
  get("lr_model", c.lr_model);
  get("lr_cost", c.lr_cost);
  get("rce_weight", c.rce_weight);
  get("embed_dim", c.embed_dim);
  get("val_fraction", c.val_fraction);
  get("sinkhorn_max_iter", c.sinkhorn_max_iter);
  get("sinkhorn_tol", c.sinkhorn_tol);
  get("bmm_iters", c.bmm_iters);
  get("learned_cost", c.learned_cost);
  get("positives_masked", c.positives_masked);
  get("partial", c.partial);
  get("seed", c.seed);
  if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("rematch")) c.rematch = parse_rematch(j.at("rematch").get<std::string>());
  c.validate();
  return c;
}

json state_to_json(const RunState& st) {
  std::ostringstream rng;
  rng << st.rng;
  json j = {{"format", "l2rm-checkpoint"},
            {"version", 1},
            {"epoch", st.epoch},
            {"model", params_json(st.model)},
            {"theta", theta_json(st.theta)},
            {"rng", rng.str()},
            {"n_matched", st.n_matched},
            {"n_mismatched", st.n_mismatched},
            {"cost_clamped", st.cost_clamped},
            {"history", st.history},
            {"best_val_rsum", st.best_val_rsum},
            {"best_epoch", st.best_epoch},
            {"best_model", params_json(st.best_model)},
            {"best_theta", theta_json(st.best_theta)}};
  json adam = {{"steps", st.adam.steps()}};
  if (st.adam.steps() > 0) {
    adam["m"] = params_json({st.adam.first_moment().w_v, st.adam.first_moment().w_t});
    adam["v"] = params_json({st.adam.second_moment().w_v, st.adam.second_moment().w_t});
  }
  j["adam"] = adam;
  if (st.bmm) {
    const auto& b = st.bmm->mixture;
    j["bmm"] = {{"alpha_lo", b.alpha_lo}, {"beta_lo", b.beta_lo},   {"alpha_hi", b.alpha_hi},
                {"beta_hi", b.beta_hi},   {"weight_hi", b.weight_hi}, {"degenerate", b.degenerate},
                {"scale_lo", st.bmm->scaler.lo}, {"scale_hi", st.bmm->scaler.hi},
                {"scale_delta", st.bmm->scaler.delta}, {"iterations", st.bmm->iterations},
                {"converged", st.bmm->converged}, {"single_component", st.bmm->single_component}};
  }
  return j;
}

RunState state_from_json(const json& j) {
  if (j.value("format", "") != "l2rm-checkpoint" || j.value("version", 0) != 1) {
    throw std::runtime_error("checkpoint: unsupported format or version");
  }
  RunState st;
  st.epoch = j.at("epoch").get<int>();
  st.model = params_from(j.at("model"));
  st.theta = theta_from(j.at("theta"));
  std::istringstream rng(j.at("rng").get<std::string>());
  rng >> st.rng;
  if (!rng) throw std::runtime_error("checkpoint: bad rng state");
  st.n_matched = j.at("n_matched").get<std::size_t>();
  st.n_mismatched = j.at("n_mismatched").get<std::size_t>();
  st.cost_clamped = j.at("cost_clamped").get<bool>();
  st.history = j.at("history");
  st.best_val_rsum = j.at("best_val_rsum").get<double>();
  st.best_epoch = j.at("best_epoch").get<int>();
  st.best_model = params_from(j.at("best_model"));
  st.best_theta = theta_from(j.at("best_theta"));
  const json& adam = j.at("adam");
  const auto steps = adam.at("steps").get<long long>();
  if (steps > 0) {
    const encoder::EncoderParams m = params_from(adam.at("m"));
    const encoder::EncoderParams v = params_from(adam.at("v"));
    st.adam.restore(steps, {m.w_v, m.w_t}, {v.w_v, v.w_t});
  }
  if (j.contains("bmm")) {
    const json& b = j.at("bmm");
    mixture::BmmFit fit;
    fit.mixture.alpha_lo = b.at("alpha_lo").get<double>();
    fit.mixture.beta_lo = b.at("beta_lo").get<double>();
    fit.mixture.alpha_hi = b.at("alpha_hi").get<double>();
    fit.mixture.beta_hi = b.at("beta_hi").get<double>();
    fit.mixture.weight_hi = b.at("weight_hi").get<double>();
    fit.mixture.degenerate = b.at("degenerate").get<bool>();
    fit.scaler = {b.at("scale_lo").get<double>(), b.at("scale_hi").get<double>(), b.at("scale_delta").get<double>()};
    fit.iterations = b.at("iterations").get<int>();
    fit.converged = b.at("converged").get<bool>();
    fit.single_component = b.value("single_component", false);
    st.bmm = fit;
  }
  return st;
}

}  // namespace pipeline
}  // namespace l2rm
