#pragma once

// Learnable transport cost: an elementwise softplus of an affine map of the
// similarity, trained on reconstructed batches whose true pairs are known.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace l2rm::cost {

using Matrix = Eigen::MatrixXd;

struct CostNetParams {
  double w = -1.0;
  double b = 1.0;
};

/// |w| and |b| are clamped to this bound after every step.
inline constexpr double kParamBound = 50.0;

double softplus(double x);
double sigmoid(double x);

/// C_ij = softplus(w·s_ij + b).
Matrix cost_forward(const Matrix& s, const CostNetParams& theta);

struct CostGrad {
  double dw = 0.0;
  double db = 0.0;
};

/// Gradient of ⟨upstream, cost_forward(s, θ)⟩ with respect to θ.
CostGrad cost_backward(const Matrix& s, const CostNetParams& theta, const Matrix& upstream);

struct ReconstructedBatch {
  /// image_ids[a]: dataset index of the image placed at row a.
  std::vector<std::size_t> image_ids;
  /// text_ids[b]: dataset index of the caption at column b (the matched batch order).
  std::vector<std::size_t> text_ids;
  /// Column positions whose original image was kept somewhere in the batch.
  std::vector<std::size_t> reserved;
  /// 1 where the row's image is the column's reserved original partner.
  Matrix pi_sup;
  /// Similarities over (rows, columns); filled by the caller.
  Matrix sims;
};

/// round-half-up(ratio·K) originals are kept; the other rows take images
/// drawn without replacement from `pool`. Row order is a seeded permutation.
ReconstructedBatch reconstruct_pairs(const std::vector<std::size_t>& matched,
                                     const std::vector<std::size_t>& pool, double reserve_ratio,
                                     std::uint64_t seed);

struct CostStepResult {
  CostNetParams theta;
  double loss_before = 0.0;
  bool clamped = false;
};

/// One gradient-descent step on ⟨π_sup, cost_forward(sims, θ)⟩.
CostStepResult cost_net_step(const CostNetParams& theta, const ReconstructedBatch& batch, double lr);

}  // namespace l2rm::cost
