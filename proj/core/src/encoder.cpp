#include "l2rm/encoder.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace l2rm::encoder {
namespace {

void normalize_rows(const Matrix& e, Matrix& u, Vector& norms, bool& floored) {
  u.resize(e.rows(), e.cols());
  norms.resize(e.rows());
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    double n = e.row(i).norm();
    if (n < kNormFloor) {
      floored = true;
      n = kNormFloor;
    }
    norms[i] = n;
    u.row(i) = e.row(i) / n;
  }
}

// d/de of u = e/‖e‖ applied to du, row by row: (du − u·(u·du)) / ‖e‖.
Matrix normalize_backward(const Matrix& u, const Vector& norms, const Matrix& du) {
  Matrix de(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double proj = u.row(i).dot(du.row(i));
    de.row(i) = (du.row(i) - proj * u.row(i)) / norms[i];
  }
  return de;
}

void check_finite(const EncoderGrad& g) {
  if (!g.w_v.allFinite() || !g.w_t.allFinite()) {
    throw std::domain_error("encoder update: non-finite gradient");
  }
}

}  // namespace

EncoderParams EncoderParams::random(Eigen::Index d_in_v, Eigen::Index d_in_t, Eigen::Index d,
                                    std::uint64_t seed) {
  if (d < 2 || d_in_v < 1 || d_in_t < 1) throw std::invalid_argument("EncoderParams: bad dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  EncoderParams p;
  p.w_v = Matrix::NullaryExpr(d_in_v, d, [&] { return g(rng); }) / std::sqrt(double(d_in_v));
  p.w_t = Matrix::NullaryExpr(d_in_t, d, [&] { return g(rng); }) / std::sqrt(double(d_in_t));
  return p;
}

void EncoderParams::validate() const {
  if (w_v.cols() != w_t.cols() || w_v.cols() < 2) {
    throw std::invalid_argument("EncoderParams: projections must share an output dim >= 2");
  }
  if (!w_v.allFinite() || !w_t.allFinite()) throw std::invalid_argument("EncoderParams: non-finite entry");
}

Forward forward(const EncoderParams& params, const Matrix& v, const Matrix& t) {
  if (v.cols() != params.w_v.rows() || t.cols() != params.w_t.rows()) {
    throw std::invalid_argument("encoder::forward: feature dim " + std::to_string(v.cols()) + "/" +
                                std::to_string(t.cols()) + " does not match the projections");
  }
  Forward f;
  normalize_rows(v * params.w_v, f.u_v, f.norm_v, f.floored);
  normalize_rows(t * params.w_t, f.u_t, f.norm_t, f.floored);
  f.s = f.u_v * f.u_t.transpose();
  return f;
}

EncoderGrad EncoderGrad::zeros_like(const EncoderParams& p) {
  return {Matrix::Zero(p.w_v.rows(), p.w_v.cols()), Matrix::Zero(p.w_t.rows(), p.w_t.cols())};
}

EncoderGrad& EncoderGrad::operator+=(const EncoderGrad& other) {
  w_v += other.w_v;
  w_t += other.w_t;
  return *this;
}

EncoderGrad backward(const Matrix& v, const Matrix& t, const Forward& fwd, const Matrix& ds) {
  if (ds.rows() != fwd.s.rows() || ds.cols() != fwd.s.cols()) {
    throw std::invalid_argument("encoder::backward: gradient shape mismatch");
  }
  const Matrix de_v = normalize_backward(fwd.u_v, fwd.norm_v, ds * fwd.u_t);
  const Matrix de_t = normalize_backward(fwd.u_t, fwd.norm_t, ds.transpose() * fwd.u_v);
  return {v.transpose() * de_v, t.transpose() * de_t};
}

EncoderParams sgd_step(const EncoderParams& params, const EncoderGrad& grad, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: lr must be >= 0");
  check_finite(grad);
  return {params.w_v - lr * grad.w_v, params.w_t - lr * grad.w_t};
}

EncoderParams Adam::step(const EncoderParams& params, const EncoderGrad& grad, double lr) {
  check_finite(grad);
  if (t_ == 0) {
    m_ = EncoderGrad::zeros_like(params);
    v_ = EncoderGrad::zeros_like(params);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  auto update = [&](const Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
    return Matrix(p.array() - lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_));
  };
  EncoderParams out;
  out.w_v = update(params.w_v, grad.w_v, m_.w_v, v_.w_v);
  out.w_t = update(params.w_t, grad.w_t, m_.w_t, v_.w_t);
  return out;
}

void Adam::restore(long long steps, EncoderGrad m, EncoderGrad v) {
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace l2rm::encoder
