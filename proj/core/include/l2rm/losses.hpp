#pragma once

// Retrieval losses over a batch similarity matrix S (rows: images, columns:
// captions, S_ii the given pair) together with their analytic gradients
// dLoss/dS. The cost-matrix loss returns its gradient w.r.t. the cost.

#include <Eigen/Dense>

namespace l2rm::loss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LossConfig {
  double alpha = 0.2;  // triplet margin
  double tau = 0.05;   // softmax temperature
  double eps = 1e-7;   // one-hot label bound for reverse cross-entropy
  double gamma = 0.1;  // label-smoothing strength (analysis only)

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  Matrix grad;
};

/// Hinge loss of pair i against its hardest in-batch caption and image
/// negatives. Ties between negatives resolve to the lowest index.
LossValue triplet_loss(const Matrix& s, Eigen::Index i, double alpha);

/// Per-pair triplet losses for every diagonal pair of the batch.
Vector triplet_per_pair(const Matrix& s, double alpha);

/// Sum of triplet_loss over all pairs of the batch, with gradient.
LossValue triplet_batch(const Matrix& s, double alpha);

struct MatchingProbs {
  Matrix v2t;  // row-stochastic: row i is p_i over captions
  Matrix t2v;  // column-stochastic: column j is p_j over images
};

MatchingProbs matching_probs(const Matrix& s, double tau);

/// Mean over pairs of the two-direction cross-entropy against one-hot labels.
LossValue infonce_loss(const Matrix& s, double tau);

/// Mean over pairs of H(p, y) in both directions, y clamped to [eps, 1 − eps].
LossValue rce_loss(const Matrix& s, double tau, double eps);

/// ⟨pi_sup, C⟩_F; the gradient w.r.t. C is pi_sup.
LossValue ot_supervision_loss(const Matrix& pi_sup, const Matrix& cost);

enum class RematchKind {
  kSymmetricKl,  // ½[KL(π̃‖p) + KL(p‖π̃)] per direction
  kKl,           // KL(π̃‖p) per direction
  kCrossEntropy, // H(π̃, p) per direction (soft-target InfoNCE)
};

/// Mean over pairs of the divergence between refined alignments and the
/// model's matching probabilities, in both retrieval directions. Both sides
/// are clamped at `floor` and renormalized before any logarithm.
/// refined_v2t is row-stochastic, refined_t2v column-stochastic.
LossValue rematch_loss(const Matrix& refined_v2t, const Matrix& refined_t2v, const Matrix& s,
                       double tau, RematchKind kind = RematchKind::kSymmetricKl,
                       double floor = 1e-12);

struct FinalLoss {
  double value = 0.0;
  double triplet = 0.0;  // summed over the matched batch
  double rematch = 0.0;  // summed over the mismatched batch
  Matrix grad_matched;
  Matrix grad_mismatched;
};

/// Triplet loss summed over the matched batch plus the rematching loss
/// summed over the mismatched batch. An empty batch (0×0) contributes 0.
FinalLoss final_loss(const Matrix& s_matched, const Matrix& s_mismatched,
                     const Matrix& refined_v2t, const Matrix& refined_t2v, const LossConfig& cfg,
                     RematchKind kind = RematchKind::kSymmetricKl);

/// (1 − γ)·y + γ/(N − 1)·(1 − y) for a one-hot y.
Vector label_smooth(const Vector& y, double gamma);

}  // namespace l2rm::loss
