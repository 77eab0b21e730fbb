#include "l2rm/cost_learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace l2rm::cost {

double softplus(double x) {
  // log(1 + e^x) without overflow for large x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix cost_forward(const Matrix& s, const CostNetParams& theta) {
  return s.unaryExpr([&](double v) { return softplus(theta.w * v + theta.b); });
}

CostGrad cost_backward(const Matrix& s, const CostNetParams& theta, const Matrix& upstream) {
  if (upstream.rows() != s.rows() || upstream.cols() != s.cols()) {
    throw std::invalid_argument("cost_backward: shape mismatch");
  }
  CostGrad g;
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double u = upstream(i, j);
      if (u == 0.0) continue;
      const double sg = sigmoid(theta.w * s(i, j) + theta.b);
      g.dw += u * sg * s(i, j);
      g.db += u * sg;
    }
  }
  return g;
}

ReconstructedBatch reconstruct_pairs(const std::vector<std::size_t>& matched,
                                     const std::vector<std::size_t>& pool, double reserve_ratio,
                                     std::uint64_t seed) {
  if (!(reserve_ratio > 0.0 && reserve_ratio <= 1.0)) {
    throw std::invalid_argument("reconstruct_pairs: reserve_ratio must be in (0, 1]");
  }
  const std::size_t k = matched.size();
  if (k == 0) throw std::invalid_argument("reconstruct_pairs: empty matched batch");
  const auto n_keep = std::min<std::size_t>(
      k, static_cast<std::size_t>(std::floor(reserve_ratio * static_cast<double>(k) + 0.5)));
  const std::size_t n_sub = k - n_keep;
  if (pool.size() < n_sub) {
    throw std::invalid_argument("reconstruct_pairs: pool has " + std::to_string(pool.size()) +
                                " images, " + std::to_string(n_sub) + " needed");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> slots(k);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);

  ReconstructedBatch out;
  out.text_ids = matched;
  out.reserved.assign(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(n_keep));
  std::sort(out.reserved.begin(), out.reserved.end());

  std::vector<std::size_t> substitutes = pool;
  std::shuffle(substitutes.begin(), substitutes.end(), rng);
  substitutes.resize(n_sub);

  std::vector<std::size_t> images;
  images.reserve(k);
  for (std::size_t col : out.reserved) images.push_back(matched[col]);
  images.insert(images.end(), substitutes.begin(), substitutes.end());
  std::shuffle(images.begin(), images.end(), rng);
  out.image_ids = std::move(images);

  const auto kk = static_cast<Eigen::Index>(k);
  out.pi_sup = Matrix::Zero(kk, kk);
  for (std::size_t col : out.reserved) {
    const auto row = std::find(out.image_ids.begin(), out.image_ids.end(), matched[col]);
    out.pi_sup(row - out.image_ids.begin(), static_cast<Eigen::Index>(col)) = 1.0;
  }
  return out;
}

CostStepResult cost_net_step(const CostNetParams& theta, const ReconstructedBatch& batch, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("cost_net_step: lr must be positive");
  if (batch.sims.rows() != batch.pi_sup.rows() || batch.sims.cols() != batch.pi_sup.cols()) {
    throw std::invalid_argument("cost_net_step: sims and pi_sup shapes differ");
  }
  CostStepResult out;
  out.loss_before = batch.pi_sup.cwiseProduct(cost_forward(batch.sims, theta)).sum();
  const CostGrad g = cost_backward(batch.sims, theta, batch.pi_sup);
  if (!std::isfinite(g.dw) || !std::isfinite(g.db)) {
    throw std::domain_error("cost_net_step: non-finite gradient");
  }
  const double w = theta.w - lr * g.dw;
  const double b = theta.b - lr * g.db;
  out.theta.w = std::clamp(w, -kParamBound, kParamBound);
  out.theta.b = std::clamp(b, -kParamBound, kParamBound);
  out.clamped = out.theta.w != w || out.theta.b != b;
  return out;
}

}  // namespace l2rm::cost
