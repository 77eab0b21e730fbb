#pragma once

// Two-component beta mixture over per-sample losses. The higher-mean
// component models mismatched pairs; its posterior is the mismatch
// probability used to split the training set.

#include <cstddef>
#include <span>
#include <vector>

namespace l2rm::mixture {

/// log Beta(alpha, beta) density at x ∈ (0, 1).
double beta_log_pdf(double x, double alpha, double beta);

struct BetaMixture {
  double alpha_lo = 1.0;
  double beta_lo = 1.0;
  double alpha_hi = 1.0;
  double beta_hi = 1.0;
  double weight_hi = 0.0;
  /// Single-component fallback (degenerate input); posterior is always 0.
  bool degenerate = false;

  double mean_lo() const { return alpha_lo / (alpha_lo + beta_lo); }
  double mean_hi() const { return alpha_hi / (alpha_hi + beta_hi); }
  double log_likelihood(std::span<const double> x) const;
};

/// Min-max map of raw losses into [delta, 1 − delta], fixed at fit time.
struct LossScaler {
  double lo = 0.0;
  double hi = 1.0;
  double delta = 1e-4;

  double operator()(double loss) const;
};

struct BmmFit {
  BetaMixture mixture;
  LossScaler scaler;
  /// Log-likelihood after the initial M-step and after every EM iteration.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
  /// The two-component fit did not beat a single beta by the BIC margin, so
  /// both components were set to that single beta with weight 0.5.
  bool single_component = false;
};

/// EM fit on min-max normalized losses. Responsibilities start from a split
/// at the sample median; the M-step matches weighted moments and keeps the
/// previous shape of a component when matching would lower its expected
/// complete-data log-likelihood, so the observed log-likelihood never drops.
/// The input is sorted internally, so the result is independent of order.
/// After EM the fit is compared with one moment-matched beta; when the
/// log-likelihood gain is at most 1.5·log N (BIC for three extra parameters)
/// the single beta is used for both components and every posterior is 0.5.
BmmFit fit_bmm(std::span<const double> losses, int em_iters = 100, double tol = 1e-8,
               double delta = 1e-4);

/// p(high component | x) for an already-normalized loss x ∈ (0, 1).
double posterior(const BetaMixture& bmm, double x);

/// p(low component | x); complements posterior().
double posterior_lo(const BetaMixture& bmm, double x);

/// Normalizes raw losses with the fit's scaler and evaluates posterior().
std::vector<double> posteriors(const BmmFit& fit, std::span<const double> losses);

struct Partition {
  std::vector<std::size_t> matched;
  std::vector<std::size_t> mismatched;
};

/// i is mismatched iff w[i] > threshold; ties at the threshold stay matched.
Partition partition(std::span<const double> w, double threshold = 0.5);

}  // namespace l2rm::mixture
