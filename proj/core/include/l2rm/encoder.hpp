#pragma once

// Linear modality encoders with unit-normalized embeddings and cosine
// similarity, plus backpropagation from dLoss/dS to the projections.

#include <cstdint>

#include <Eigen/Dense>

namespace l2rm::encoder {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kNormFloor = 1e-12;

struct EncoderParams {
  Matrix w_v;  // d_in_v × d
  Matrix w_t;  // d_in_t × d

  /// Gaussian entries scaled by 1/sqrt(d_in).
  static EncoderParams random(Eigen::Index d_in_v, Eigen::Index d_in_t, Eigen::Index d,
                              std::uint64_t seed);
  void validate() const;
};

struct Forward {
  Matrix u_v;     // unit-norm image embeddings, one per row
  Matrix u_t;     // unit-norm caption embeddings
  Vector norm_v;  // pre-normalization norms (after the floor)
  Vector norm_t;
  Matrix s;       // u_v · u_tᵀ
  /// Some embedding norm fell below kNormFloor.
  bool floored = false;
};

/// Rows of v and t may differ in count; S is |v| × |t|.
Forward forward(const EncoderParams& params, const Matrix& v, const Matrix& t);

inline Matrix similarity(const EncoderParams& params, const Matrix& v, const Matrix& t) {
  return forward(params, v, t).s;
}

struct EncoderGrad {
  Matrix w_v;
  Matrix w_t;

  static EncoderGrad zeros_like(const EncoderParams& p);
  EncoderGrad& operator+=(const EncoderGrad& other);
};

/// dLoss/dW given dLoss/dS for a forward pass over (v, t).
EncoderGrad backward(const Matrix& v, const Matrix& t, const Forward& fwd, const Matrix& ds);

/// params − lr·grad. Throws on a non-finite gradient.
EncoderParams sgd_step(const EncoderParams& params, const EncoderGrad& grad, double lr);

/// Adam with the usual bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  EncoderParams step(const EncoderParams& params, const EncoderGrad& grad, double lr);

  long long steps() const { return t_; }
  const EncoderGrad& first_moment() const { return m_; }
  const EncoderGrad& second_moment() const { return v_; }
  void restore(long long steps, EncoderGrad m, EncoderGrad v);

 private:
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long long t_ = 0;
  EncoderGrad m_;
  EncoderGrad v_;
};

}  // namespace l2rm::encoder
