#include "l2rm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace l2rm::loss {
namespace {

void require_square(const Matrix& s, const char* who) {
  if (s.rows() != s.cols() || s.rows() == 0) {
    throw std::invalid_argument(std::string(who) + ": similarity must be a non-empty square matrix");
  }
}

void require_tau(double tau, const char* who) {
  if (!(tau > 0.0)) throw std::invalid_argument(std::string(who) + ": tau must be positive");
}

// Row-wise softmax of x with max subtraction.
Matrix row_softmax(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (x.row(i).array() - m).exp().matrix();
    out.row(i) = e / e.sum();
  }
  return out;
}

// Backpropagates dL/dp through p = softmax(x / tau) for one distribution.
Vector softmax_backward(const Vector& p, const Vector& dp, double tau) {
  const double inner = p.dot(dp);
  return (p.array() * (dp.array() - inner)).matrix() / tau;
}

struct Divergence {
  double value;
  Vector dp;
};

Divergence distribution_divergence(const Vector& target, const Vector& model, RematchKind kind,
                                   double floor) {
  const Vector t_clamped = target.cwiseMax(floor);
  const Vector t = t_clamped / t_clamped.sum();
  const Vector c = model.cwiseMax(floor);
  const double z = c.sum();
  const Vector r = c / z;

  const Vector log_t = t.array().log().matrix();
  const Vector log_r = r.array().log().matrix();

  double value = 0.0;
  Vector g(r.size());
  switch (kind) {
    case RematchKind::kSymmetricKl:
      value = 0.5 * ((t - r).array() * (log_t - log_r).array()).sum();
      g = 0.5 * (-(t.array() / r.array()) + (log_r - log_t).array() + 1.0).matrix();
      break;
    case RematchKind::kKl:
      value = (t.array() * (log_t - log_r).array()).sum();
      g = -(t.array() / r.array()).matrix();
      break;
    case RematchKind::kCrossEntropy:
      value = -(t.array() * log_r.array()).sum();
      g = -(t.array() / r.array()).matrix();
      break;
  }
  // Through the renormalization r = c / Σc and the clamp c = max(p, floor).
  const double gr = g.dot(r);
  Vector dp(r.size());
  for (Eigen::Index k = 0; k < r.size(); ++k) {
    dp[k] = model[k] > floor ? (g[k] - gr) / z : 0.0;
  }
  return {value, dp};
}

void require_distributions(const Matrix& m, bool by_row, const char* who) {
  if ((m.array() < -1e-12).any() || !m.allFinite()) {
    throw std::invalid_argument(std::string(who) + ": refined alignment has invalid entries");
  }
  const Vector sums = by_row ? Vector(m.rowwise().sum()) : Vector(m.colwise().sum().transpose());
  if (((sums.array() - 1.0).abs() > 1e-6).any()) {
    throw std::invalid_argument(std::string(who) + ": refined alignment " +
                                (by_row ? "rows" : "columns") + " must sum to 1");
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("LossConfig: alpha must be >= 0");
  if (!(tau > 0.0)) throw std::invalid_argument("LossConfig: tau must be positive");
  if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("LossConfig: eps must be in (0, 0.5)");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("LossConfig: gamma must be in [0, 1]");
}

LossValue triplet_loss(const Matrix& s, Eigen::Index i, double alpha) {
  require_square(s, "triplet_loss");
  const Eigen::Index n = s.rows();
  if (n < 2) throw std::invalid_argument("triplet_loss: a batch of one pair has no negatives");
  if (i < 0 || i >= n) throw std::out_of_range("triplet_loss: pair index out of range");

  Eigen::Index hard_text = -1, hard_image = -1;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) continue;
    if (hard_text < 0 || s(i, j) > s(i, hard_text)) hard_text = j;
    if (hard_image < 0 || s(j, i) > s(hard_image, i)) hard_image = j;
  }

  LossValue out;
  out.grad = Matrix::Zero(n, n);
  const double to_text = alpha - s(i, i) + s(i, hard_text);
  const double to_image = alpha - s(i, i) + s(hard_image, i);
  if (to_text > 0.0) {
    out.value += to_text;
    out.grad(i, i) -= 1.0;
    out.grad(i, hard_text) += 1.0;
  }
  if (to_image > 0.0) {
    out.value += to_image;
    out.grad(i, i) -= 1.0;
    out.grad(hard_image, i) += 1.0;
  }
  return out;
}

Vector triplet_per_pair(const Matrix& s, double alpha) {
  require_square(s, "triplet_per_pair");
  Vector out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) out[i] = triplet_loss(s, i, alpha).value;
  return out;
}

LossValue triplet_batch(const Matrix& s, double alpha) {
  require_square(s, "triplet_batch");
  LossValue out;
  out.grad = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    LossValue term = triplet_loss(s, i, alpha);
    out.value += term.value;
    out.grad += term.grad;
  }
  return out;
}

MatchingProbs matching_probs(const Matrix& s, double tau) {
  require_tau(tau, "matching_probs");
  const Matrix logits = s / tau;
  MatchingProbs out;
  out.v2t = row_softmax(logits);
  out.t2v = row_softmax(logits.transpose()).transpose();
  return out;
}

LossValue infonce_loss(const Matrix& s, double tau) {
  require_square(s, "infonce_loss");
  require_tau(tau, "infonce_loss");
  const Eigen::Index n = s.rows();
  const Matrix logits = s / tau;
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rm = logits.row(i).maxCoeff();
    const double row_lse = rm + std::log((logits.row(i).array() - rm).exp().sum());
    const double cm = logits.col(i).maxCoeff();
    const double col_lse = cm + std::log((logits.col(i).array() - cm).exp().sum());
    value += (row_lse - logits(i, i)) + (col_lse - logits(i, i));
  }
  const MatchingProbs probs = matching_probs(s, tau);
  const Matrix eye = Matrix::Identity(n, n);
  LossValue out;
  out.value = value / static_cast<double>(n);
  out.grad = ((probs.v2t - eye) + (probs.t2v - eye)) / (static_cast<double>(n) * tau);
  return out;
}

LossValue rce_loss(const Matrix& s, double tau, double eps) {
  require_square(s, "rce_loss");
  require_tau(tau, "rce_loss");
  if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("rce_loss: eps must be in (0, 0.5)");
  const Eigen::Index n = s.rows();
  const MatchingProbs probs = matching_probs(s, tau);
  const double log_on = std::log1p(-eps);
  const double log_off = std::log(eps);

  LossValue out;
  out.grad = Matrix::Zero(n, n);
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector label = Vector::Constant(n, log_off);
    label[i] = log_on;

    const Vector p_row = probs.v2t.row(i).transpose();
    value -= p_row.dot(label);
    out.grad.row(i) += softmax_backward(p_row, -label, tau).transpose();

    const Vector p_col = probs.t2v.col(i);
    value -= p_col.dot(label);
    out.grad.col(i) += softmax_backward(p_col, -label, tau);
  }
  out.value = value / static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

LossValue ot_supervision_loss(const Matrix& pi_sup, const Matrix& cost) {
  if (pi_sup.rows() != cost.rows() || pi_sup.cols() != cost.cols()) {
    throw std::invalid_argument("ot_supervision_loss: shape mismatch");
  }
  return LossValue{pi_sup.cwiseProduct(cost).sum(), pi_sup};
}

LossValue rematch_loss(const Matrix& refined_v2t, const Matrix& refined_t2v, const Matrix& s,
                       double tau, RematchKind kind, double floor) {
  require_square(s, "rematch_loss");
  require_tau(tau, "rematch_loss");
  if (refined_v2t.rows() != s.rows() || refined_v2t.cols() != s.cols() ||
      refined_t2v.rows() != s.rows() || refined_t2v.cols() != s.cols()) {
    throw std::invalid_argument("rematch_loss: refined alignments must match the batch shape");
  }
  require_distributions(refined_v2t, true, "rematch_loss");
  require_distributions(refined_t2v, false, "rematch_loss");

  const Eigen::Index n = s.rows();
  const MatchingProbs probs = matching_probs(s, tau);
  LossValue out;
  out.grad = Matrix::Zero(n, n);
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector p_row = probs.v2t.row(i).transpose();
    const Divergence row = distribution_divergence(refined_v2t.row(i).transpose(), p_row, kind, floor);
    value += row.value;
    out.grad.row(i) += softmax_backward(p_row, row.dp, tau).transpose();

    const Vector p_col = probs.t2v.col(i);
    const Divergence col = distribution_divergence(refined_t2v.col(i), p_col, kind, floor);
    value += col.value;
    out.grad.col(i) += softmax_backward(p_col, col.dp, tau);
  }
  out.value = value / static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

FinalLoss final_loss(const Matrix& s_matched, const Matrix& s_mismatched,
                     const Matrix& refined_v2t, const Matrix& refined_t2v, const LossConfig& cfg,
                     RematchKind kind) {
  cfg.validate();
  FinalLoss out;
  out.grad_matched = Matrix::Zero(s_matched.rows(), s_matched.cols());
  out.grad_mismatched = Matrix::Zero(s_mismatched.rows(), s_mismatched.cols());
  if (s_matched.size() > 0) {
    LossValue t = triplet_batch(s_matched, cfg.alpha);
    out.triplet = t.value;
    out.grad_matched = std::move(t.grad);
  }
  if (s_mismatched.size() > 0) {
    const double n = static_cast<double>(s_mismatched.rows());
    LossValue r = rematch_loss(refined_v2t, refined_t2v, s_mismatched, cfg.tau, kind);
    out.rematch = n * r.value;
    out.grad_mismatched = n * r.grad;
  }
  out.value = out.triplet + out.rematch;
  return out;
}

Vector label_smooth(const Vector& y, double gamma) {
  const Eigen::Index n = y.size();
  if (n < 2) throw std::invalid_argument("label_smooth: need at least two classes");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("label_smooth: gamma must be in [0, 1]");
  const bool binary = ((y.array() == 0.0) || (y.array() == 1.0)).all();
  if (!binary || y.sum() != 1.0) throw std::invalid_argument("label_smooth: y must be one-hot");
  const Vector ones = Vector::Ones(n);
  return (1.0 - gamma) * y + gamma / static_cast<double>(n - 1) * (ones - y);
}

}  // namespace l2rm::loss
