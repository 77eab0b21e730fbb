#pragma once

// Entropy-regularized optimal transport with plan masking, the partial-OT
// reduction to a balanced problem on an extended support, and plan
// normalization used to build soft alignment targets.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace l2rm::ot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a masked kernel leaves some row or column with no admissible
/// mass route. Sinkhorn would otherwise divide by (near) zero forever.
class SolverInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Nonnegative mass vector with strictly positive total.
class Measure {
 public:
  explicit Measure(Vector mass);

  static Measure uniform(Eigen::Index n, double total = 1.0);

  const Vector& mass() const { return mass_; }
  double operator[](Eigen::Index i) const { return mass_[i]; }
  Eigen::Index size() const { return mass_.size(); }
  double total() const { return mass_.sum(); }

 private:
  Vector mass_;
};

/// Finite-valued transport cost per unit mass.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix values);

  const Matrix& values() const { return values_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }
  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }

 private:
  Matrix values_;
};

/// Binary admissibility pattern: entry 0 forbids transport on that arc.
class MaskMatrix {
 public:
  using Storage = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

  explicit MaskMatrix(Storage entries);

  static MaskMatrix all_ones(Eigen::Index rows, Eigen::Index cols);
  /// Zero diagonal, ones elsewhere: forbids a sample from being rematched
  /// to its own (suspected false-positive) partner.
  static MaskMatrix off_diagonal(Eigen::Index n);
  /// Builds a mask from any real matrix, treating nonzero as admissible.
  static MaskMatrix from_real(const Matrix& m);

  const Storage& entries() const { return entries_; }
  bool allowed(Eigen::Index i, Eigen::Index j) const { return entries_(i, j) != 0; }
  Eigen::Index rows() const { return entries_.rows(); }
  Eigen::Index cols() const { return entries_.cols(); }
  Matrix as_real() const { return entries_.cast<double>(); }

 private:
  Storage entries_;
};

struct SinkhornConfig {
  double lambda = 0.01;
  int max_iter = 1000;
  double tol = 1e-9;
  double kernel_floor = 1e-300;
  /// Below this regularization the iterations run on log-scalings.
  double log_domain_below = 0.05;
  /// Newton steps on the dual scaling equations, taken only when max_iter
  /// Sinkhorn sweeps did not reach tol. Near-vertex plans (small λ) make the
  /// sweeps contract arbitrarily slowly; Newton solves the same equations.
  int newton_max_steps = 50;

  void validate() const;
};

struct TransportPlan {
  Matrix plan;
  bool converged = false;
  int iterations = 0;
  /// Largest absolute marginal violation of the returned plan.
  double marginal_error = 0.0;
  bool log_domain = false;
  int newton_steps = 0;
};

/// Masked entropic OT. Returns diag(a) K diag(b), K = mask ⊙ exp(-C/λ).
/// Stops at the first of marginal violation ≤ tol and max_iter updates.
TransportPlan sinkhorn(const CostMatrix& cost, const Measure& p, const Measure& q,
                       const MaskMatrix& mask, const SinkhornConfig& cfg);

struct ExtendedProblem {
  CostMatrix cost;
  Measure p;
  Measure q;
  MaskMatrix mask;
};

/// Adds one virtual source and one virtual sink so that transporting
/// exactly rho units between the original supports becomes a balanced
/// problem. Border costs are xi, the corner costs 2·xi + a_big.
ExtendedProblem extend_partial(const CostMatrix& cost, const Measure& p, const Measure& q,
                               const MaskMatrix& mask, double rho, double xi, double a_big);

struct VirtualCosts {
  double xi;
  double a_big;
};

/// xi = 0.1·(max C − min C + 1), A = max C + 1.
VirtualCosts default_virtual_costs(const CostMatrix& cost);

/// Partial transport of rho units, solved through extend_partial + sinkhorn.
/// The returned plan is (M̂ ⊙ π̂) restricted to the original m×n block.
TransportPlan partial_ot(const CostMatrix& cost, const Measure& p, const Measure& q,
                         const MaskMatrix& mask, double rho, const SinkhornConfig& cfg);

TransportPlan partial_ot(const CostMatrix& cost, const Measure& p, const Measure& q,
                         const MaskMatrix& mask, double rho, const SinkhornConfig& cfg,
                         const VirtualCosts& virtual_costs);

enum class Direction { kRow, kColumn };

/// Row- (or column-) stochastic version of `plan`. Rows whose mass is at most
/// floor·n fall back to the uniform distribution over their unmasked entries.
Matrix normalize_plan(const Matrix& plan, const MaskMatrix& mask, Direction direction,
                      double floor = 1e-12);

/// Exact minimum-cost transport by integer min-cost flow. Marginals are
/// scaled by mass_scale and must round to integers that balance. Intended as
/// a test oracle for small instances (m, n ≤ 16).
TransportPlan exact_ot_oracle(const CostMatrix& cost, const Measure& p, const Measure& q,
                              const MaskMatrix& mask, std::int64_t mass_scale);

double transport_cost(const Matrix& plan, const CostMatrix& cost);

/// Shannon entropy −Σ π log π with 0 log 0 = 0.
double plan_entropy(const Matrix& plan);

}  // namespace l2rm::ot
