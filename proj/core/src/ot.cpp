#include "l2rm/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace l2rm::ot {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Plain-domain kernels underflow once |C|/λ approaches the double exponent
// range, so such problems are routed to the log-domain iterations as well.
constexpr double kPlainExponentLimit = 500.0;

std::string shape(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

double log_sum_exp(const Vector& x) {
  const double m = x.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log((x.array() - m).exp().sum());
}

void check_problem(const CostMatrix& cost, const Measure& p, const Measure& q,
                   const MaskMatrix& mask, double tol) {
  if (cost.rows() != p.size() || cost.cols() != q.size()) {
    throw std::invalid_argument("sinkhorn: cost is " + shape(cost.rows(), cost.cols()) +
                                " but marginals have sizes " + std::to_string(p.size()) +
                                " and " + std::to_string(q.size()));
  }
  if (mask.rows() != cost.rows() || mask.cols() != cost.cols()) {
    throw std::invalid_argument("sinkhorn: mask is " + shape(mask.rows(), mask.cols()) +
                                ", cost is " + shape(cost.rows(), cost.cols()));
  }
  if (std::abs(p.total() - q.total()) > tol) {
    std::ostringstream os;
    os << "sinkhorn: marginal totals differ (" << p.total() << " vs " << q.total() << ")";
    throw std::invalid_argument(os.str());
  }
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    if (p[i] > 0.0 && mask.entries().row(i).cast<int>().sum() == 0) {
      throw SolverInfeasible("sinkhorn: mask row " + std::to_string(i) +
                             " has no admissible entry but carries mass");
    }
  }
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    if (q[j] > 0.0 && mask.entries().col(j).cast<int>().sum() == 0) {
      throw SolverInfeasible("sinkhorn: mask column " + std::to_string(j) +
                             " has no admissible entry but carries mass");
    }
  }
}

double marginal_violation(const Matrix& plan, const Measure& p, const Measure& q) {
  const double row_err = (plan.rowwise().sum() - p.mass()).cwiseAbs().maxCoeff();
  const double col_err = (plan.colwise().sum().transpose() - q.mass()).cwiseAbs().maxCoeff();
  return std::max(row_err, col_err);
}

Vector scale_update(const Vector& target, const Vector& denom, double floor, const char* axis) {
  Vector out(target.size());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) {
      out[i] = 0.0;
    } else if (denom[i] <= floor) {
      throw SolverInfeasible(std::string("sinkhorn: kernel ") + axis + " " + std::to_string(i) +
                             " fell to the kernel floor");
    } else {
      out[i] = target[i] / denom[i];
    }
  }
  return out;
}

struct Scalings {
  Matrix log_k;
  Vector u;
  Vector v;
  bool converged = false;
  int iterations = 0;
};

Matrix plan_from_logs(const Scalings& s) {
  Matrix plan(s.log_k.rows(), s.log_k.cols());
  for (Eigen::Index j = 0; j < plan.cols(); ++j) {
    for (Eigen::Index i = 0; i < plan.rows(); ++i) {
      const double e = s.u[i] + s.log_k(i, j) + s.v[j];
      plan(i, j) = std::isfinite(e) ? std::exp(e) : 0.0;
    }
  }
  return plan;
}

// Newton iterations on the scaling equations  rowsum(π) = p, colsum(π) = q
// with π = exp(u ⊕ log K ⊕ v). The Jacobian is the bipartite Laplacian-like
// block matrix [diag(π1) π; πᵀ diag(πᵀ1)]; one column potential is pinned
// to remove the constant shift (u + t, v − t). Backtracks on the max residual.
int newton_polish(Scalings& s, const Measure& p, const Measure& q, double tol, int max_steps) {
  std::vector<Eigen::Index> rows, cols;
  for (Eigen::Index i = 0; i < p.size(); ++i) if (p[i] > 0.0) rows.push_back(i);
  for (Eigen::Index j = 0; j < q.size(); ++j) if (q[j] > 0.0) cols.push_back(j);
  const auto mr = static_cast<Eigen::Index>(rows.size());
  const auto nc = static_cast<Eigen::Index>(cols.size());
  const Eigen::Index dim = mr + nc - 1;

  auto residual = [&](const Matrix& plan, Vector& r) {
    r.resize(mr + nc);
    const Vector rs = plan.rowwise().sum();
    const Vector cs = plan.colwise().sum().transpose();
    for (Eigen::Index a = 0; a < mr; ++a) r[a] = p[rows[static_cast<std::size_t>(a)]] - rs[rows[static_cast<std::size_t>(a)]];
    for (Eigen::Index b = 0; b < nc; ++b) r[mr + b] = q[cols[static_cast<std::size_t>(b)]] - cs[cols[static_cast<std::size_t>(b)]];
    return r.cwiseAbs().maxCoeff();
  };

  Matrix plan = plan_from_logs(s);
  Vector r;
  double err = residual(plan, r);
  int steps = 0;
  while (err > tol && steps < max_steps && dim > 0) {
    Matrix h = Matrix::Zero(dim, dim);
    const Vector rs = plan.rowwise().sum();
    const Vector cs = plan.colwise().sum().transpose();
    for (Eigen::Index a = 0; a < mr; ++a) h(a, a) = rs[rows[static_cast<std::size_t>(a)]];
    for (Eigen::Index b = 0; b + 1 < nc; ++b) {
      const Eigen::Index j = cols[static_cast<std::size_t>(b)];
      h(mr + b, mr + b) = cs[j];
      for (Eigen::Index a = 0; a < mr; ++a) {
        const double x = plan(rows[static_cast<std::size_t>(a)], j);
        h(a, mr + b) = x;
        h(mr + b, a) = x;
      }
    }
    h.diagonal().array() += 1e-14 * h.diagonal().maxCoeff();
    const Vector delta = h.ldlt().solve(r.head(dim));
    if (!delta.allFinite()) break;

    bool accepted = false;
    for (double t = 1.0; t > 1e-9; t *= 0.5) {
      Scalings trial = s;
      for (Eigen::Index a = 0; a < mr; ++a) trial.u[rows[static_cast<std::size_t>(a)]] += t * delta[a];
      for (Eigen::Index b = 0; b + 1 < nc; ++b) trial.v[cols[static_cast<std::size_t>(b)]] += t * delta[mr + b];
      Matrix trial_plan = plan_from_logs(trial);
      Vector trial_r;
      const double trial_err = residual(trial_plan, trial_r);
      if (std::isfinite(trial_err) && trial_err < err) {
        s = std::move(trial);
        plan = std::move(trial_plan);
        r = std::move(trial_r);
        err = trial_err;
        accepted = true;
        break;
      }
    }
    ++steps;
    if (!accepted) break;
  }
  s.converged = err <= tol;
  return steps;
}

Scalings solve_plain(const CostMatrix& cost, const Measure& p, const Measure& q,
                     const MaskMatrix& mask, const SinkhornConfig& cfg, Matrix& plan_out) {
  const Matrix kernel = mask.as_real().cwiseProduct((-cost.values() / cfg.lambda).array().exp().matrix());
  Vector a = Vector::Zero(p.size());
  Vector b = Vector::Ones(q.size());

  Scalings out;
  int it = 0;
  while (true) {
    const Vector kb = kernel * b;
    if (it > 0) {
      const double err = (a.cwiseProduct(kb) - p.mass()).cwiseAbs().maxCoeff();
      if (err <= cfg.tol) {
        out.converged = true;
        break;
      }
    }
    if (it >= cfg.max_iter) break;
    a = scale_update(p.mass(), kb, cfg.kernel_floor, "row");
    const Vector kta = kernel.transpose() * a;
    b = scale_update(q.mass(), kta, cfg.kernel_floor, "column");
    ++it;
  }
  out.iterations = it;
  plan_out = a.asDiagonal() * kernel * b.asDiagonal();
  if (!out.converged) {
    out.log_k = kernel.array().log().matrix();
    out.u = a.array().log().matrix();
    out.v = b.array().log().matrix();
  }
  return out;
}

Scalings solve_log(const CostMatrix& cost, const Measure& p, const Measure& q,
                   const MaskMatrix& mask, const SinkhornConfig& cfg) {
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();

  Scalings out;
  out.log_k.resize(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      out.log_k(i, j) = mask.allowed(i, j) ? -cost(i, j) / cfg.lambda : kNegInf;
    }
  }
  // Column j of log_k and column i of log_kt are both contiguous.
  const Matrix log_kt = out.log_k.transpose();

  Vector log_p(m), log_q(n);
  for (Eigen::Index i = 0; i < m; ++i) log_p[i] = p[i] > 0.0 ? std::log(p[i]) : kNegInf;
  for (Eigen::Index j = 0; j < n; ++j) log_q[j] = q[j] > 0.0 ? std::log(q[j]) : kNegInf;

  Vector& u = out.u;
  Vector& v = out.v;
  u = Vector::Constant(m, kNegInf);
  v = Vector::Zero(n);
  Vector row_lse(m);

  int it = 0;
  while (true) {
    for (Eigen::Index i = 0; i < m; ++i) row_lse[i] = log_sum_exp(log_kt.col(i) + v);
    if (it > 0) {
      double err = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double mass = u[i] == kNegInf ? 0.0 : std::exp(u[i] + row_lse[i]);
        err = std::max(err, std::abs(mass - p[i]));
      }
      if (err <= cfg.tol) {
        out.converged = true;
        break;
      }
    }
    if (it >= cfg.max_iter) break;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (log_p[i] == kNegInf) {
        u[i] = kNegInf;
      } else if (row_lse[i] == kNegInf) {
        throw SolverInfeasible("sinkhorn: log-kernel row " + std::to_string(i) + " is empty");
      } else {
        u[i] = log_p[i] - row_lse[i];
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double col_lse = log_sum_exp(out.log_k.col(j) + u);
      if (log_q[j] == kNegInf) {
        v[j] = kNegInf;
      } else if (col_lse == kNegInf) {
        throw SolverInfeasible("sinkhorn: log-kernel column " + std::to_string(j) + " is empty");
      } else {
        v[j] = log_q[j] - col_lse;
      }
    }
    ++it;
  }
  out.iterations = it;
  return out;
}

}  // namespace

Measure::Measure(Vector mass) : mass_(std::move(mass)) {
  if (mass_.size() == 0) throw std::invalid_argument("Measure: empty support");
  for (Eigen::Index i = 0; i < mass_.size(); ++i) {
    if (!std::isfinite(mass_[i]) || mass_[i] < 0.0) {
      throw std::invalid_argument("Measure: entry " + std::to_string(i) +
                                  " is negative or non-finite");
    }
  }
  if (!(mass_.sum() > 0.0)) throw std::invalid_argument("Measure: total mass must be positive");
}

Measure Measure::uniform(Eigen::Index n, double total) {
  if (n <= 0) throw std::invalid_argument("Measure::uniform: n must be positive");
  return Measure(Vector::Constant(n, total / static_cast<double>(n)));
}

CostMatrix::CostMatrix(Matrix values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw std::invalid_argument("CostMatrix: non-finite entry");
}

MaskMatrix::MaskMatrix(Storage entries) : entries_(std::move(entries)) {
  if ((entries_.array() > 1).any()) throw std::invalid_argument("MaskMatrix: entries must be 0 or 1");
}

MaskMatrix MaskMatrix::all_ones(Eigen::Index rows, Eigen::Index cols) {
  return MaskMatrix(Storage::Ones(rows, cols));
}

MaskMatrix MaskMatrix::off_diagonal(Eigen::Index n) {
  Storage s = Storage::Ones(n, n);
  s.diagonal().setZero();
  return MaskMatrix(std::move(s));
}

MaskMatrix MaskMatrix::from_real(const Matrix& m) {
  return MaskMatrix((m.array() != 0.0).cast<std::uint8_t>().matrix());
}

void SinkhornConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("SinkhornConfig: lambda must be positive");
  if (!(tol > 0.0)) throw std::invalid_argument("SinkhornConfig: tol must be positive");
  if (max_iter < 1) throw std::invalid_argument("SinkhornConfig: max_iter must be >= 1");
  if (kernel_floor < 0.0) throw std::invalid_argument("SinkhornConfig: kernel_floor must be >= 0");
  if (newton_max_steps < 0) throw std::invalid_argument("SinkhornConfig: newton_max_steps must be >= 0");
}

TransportPlan sinkhorn(const CostMatrix& cost, const Measure& p, const Measure& q,
                       const MaskMatrix& mask, const SinkhornConfig& cfg) {
  cfg.validate();
  check_problem(cost, p, q, mask, cfg.tol);

  const bool use_log = cfg.lambda < cfg.log_domain_below ||
                       cost.values().cwiseAbs().maxCoeff() / cfg.lambda > kPlainExponentLimit;
  TransportPlan out;
  out.log_domain = use_log;
  Scalings scalings;
  if (use_log) {
    scalings = solve_log(cost, p, q, mask, cfg);
  } else {
    scalings = solve_plain(cost, p, q, mask, cfg, out.plan);
  }
  out.converged = scalings.converged;
  out.iterations = scalings.iterations;
  if (!scalings.converged && cfg.newton_max_steps > 0) {
    out.newton_steps = newton_polish(scalings, p, q, cfg.tol, cfg.newton_max_steps);
    out.converged = scalings.converged;
    out.plan = plan_from_logs(scalings);
  } else if (use_log) {
    out.plan = plan_from_logs(scalings);
  }
  // The kernel is already masked; multiplying again makes the zero pattern
  // independent of any floating-point path through the iterations.
  out.plan = out.plan.cwiseProduct(mask.as_real());
  out.marginal_error = marginal_violation(out.plan, p, q);
  return out;
}

ExtendedProblem extend_partial(const CostMatrix& cost, const Measure& p, const Measure& q,
                               const MaskMatrix& mask, double rho, double xi, double a_big) {
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();
  if (p.size() != m || q.size() != n || mask.rows() != m || mask.cols() != n) {
    throw std::invalid_argument("extend_partial: dimension mismatch");
  }
  const double p_total = p.total();
  const double q_total = q.total();
  const double max_rho = std::min(p_total, q_total);
  if (!(rho >= 0.0) || rho > max_rho * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "extend_partial: rho=" << rho << " outside [0, " << max_rho << "]";
    throw std::invalid_argument(os.str());
  }
  if (!(xi > 0.0)) throw std::invalid_argument("extend_partial: xi must be positive");
  if (!(a_big > cost.values().maxCoeff())) {
    throw std::invalid_argument("extend_partial: a_big must exceed the largest cost");
  }

  Matrix c_hat(m + 1, n + 1);
  c_hat.topLeftCorner(m, n) = cost.values();
  c_hat.col(n).head(m).setConstant(xi);
  c_hat.row(m).head(n).setConstant(xi);
  c_hat(m, n) = 2.0 * xi + a_big;

  // Virtual masses that should be exactly zero can come out as -1e-17.
  auto virtual_mass = [](double total, double r) { return std::max(0.0, total - r); };
  Vector p_hat(m + 1);
  p_hat << p.mass(), virtual_mass(q_total, rho);
  Vector q_hat(n + 1);
  q_hat << q.mass(), virtual_mass(p_total, rho);

  MaskMatrix::Storage m_hat = MaskMatrix::Storage::Ones(m + 1, n + 1);
  m_hat.topLeftCorner(m, n) = mask.entries();

  return ExtendedProblem{CostMatrix(std::move(c_hat)), Measure(std::move(p_hat)),
                         Measure(std::move(q_hat)), MaskMatrix(std::move(m_hat))};
}

VirtualCosts default_virtual_costs(const CostMatrix& cost) {
  const double hi = cost.values().maxCoeff();
  const double lo = cost.values().minCoeff();
  return VirtualCosts{0.1 * (hi - lo + 1.0), hi + 1.0};
}

TransportPlan partial_ot(const CostMatrix& cost, const Measure& p, const Measure& q,
                         const MaskMatrix& mask, double rho, const SinkhornConfig& cfg) {
  return partial_ot(cost, p, q, mask, rho, cfg, default_virtual_costs(cost));
}

TransportPlan partial_ot(const CostMatrix& cost, const Measure& p, const Measure& q,
                         const MaskMatrix& mask, double rho, const SinkhornConfig& cfg,
                         const VirtualCosts& virtual_costs) {
  cfg.validate();
  const ExtendedProblem ext =
      extend_partial(cost, p, q, mask, rho, virtual_costs.xi, virtual_costs.a_big);
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();

  if (rho == 0.0) {
    TransportPlan none;
    none.plan = Matrix::Zero(m, n);
    none.converged = true;
    return none;
  }

  TransportPlan full = sinkhorn(ext.cost, ext.p, ext.q, ext.mask, cfg);
  const Matrix masked = ext.mask.as_real().cwiseProduct(full.plan);

  TransportPlan out;
  out.plan = masked.topLeftCorner(m, n);
  out.converged = full.converged;
  out.iterations = full.iterations;
  out.marginal_error = full.marginal_error;
  out.log_domain = full.log_domain;
  out.newton_steps = full.newton_steps;
  return out;
}

Matrix normalize_plan(const Matrix& plan, const MaskMatrix& mask, Direction direction,
                      double floor) {
  if (plan.rows() != mask.rows() || plan.cols() != mask.cols()) {
    throw std::invalid_argument("normalize_plan: plan and mask shapes differ");
  }
  if (floor < 0.0) throw std::invalid_argument("normalize_plan: floor must be >= 0");
  const Matrix allowed = mask.as_real();
  // Work on rows; columns are handled through the transpose.
  const bool by_row = direction == Direction::kRow;
  const Matrix src = by_row ? plan : plan.transpose();
  const Matrix adm = by_row ? allowed : allowed.transpose();
  Matrix out(src.rows(), src.cols());
  const double width = static_cast<double>(src.cols());
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    const double total = src.row(i).sum();
    if (total <= floor * width) {
      const double k = adm.row(i).sum();
      out.row(i) = k > 0.0 ? Eigen::RowVectorXd(adm.row(i) / k)
                           : Eigen::RowVectorXd::Zero(src.cols());
    } else {
      out.row(i) = src.row(i) / total;
    }
  }
  return by_row ? out : Matrix(out.transpose());
}

double transport_cost(const Matrix& plan, const CostMatrix& cost) {
  if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) {
    throw std::invalid_argument("transport_cost: shape mismatch");
  }
  return plan.cwiseProduct(cost.values()).sum();
}

double plan_entropy(const Matrix& plan) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < plan.cols(); ++j) {
    for (Eigen::Index i = 0; i < plan.rows(); ++i) {
      const double x = plan(i, j);
      if (x > 0.0) h -= x * std::log(x);
    }
  }
  return h;
}

}  // namespace l2rm::ot
