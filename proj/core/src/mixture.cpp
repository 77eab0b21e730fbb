#include "l2rm/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace l2rm::mixture {
namespace {

constexpr double kMinShape = 1e-3;
constexpr double kMaxShape = 1e5;

struct Shape {
  double alpha;
  double beta;
};

double log_mix(double log_a, double log_b) {
  const double m = std::max(log_a, log_b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(log_a - m) + std::exp(log_b - m));
}

// Weighted method of moments. Returns false when the weights carry no mass.
bool match_moments(std::span<const double> x, std::span<const double> resp, Shape& out) {
  double w_sum = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    w_sum += resp[i];
    mean += resp[i] * x[i];
  }
  if (!(w_sum > 1e-12)) return false;
  mean /= w_sum;
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) var += resp[i] * (x[i] - mean) * (x[i] - mean);
  var /= w_sum;

  const double ceiling = mean * (1.0 - mean);
  var = std::clamp(var, 1e-10, 0.999 * ceiling);
  const double common = ceiling / var - 1.0;
  out.alpha = std::clamp(mean * common, kMinShape, kMaxShape);
  out.beta = std::clamp((1.0 - mean) * common, kMinShape, kMaxShape);
  return true;
}

// Expected complete-data log-likelihood of one component's shape.
double component_q(std::span<const double> x, std::span<const double> resp, const Shape& s) {
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (resp[i] > 0.0) q += resp[i] * beta_log_pdf(x[i], s.alpha, s.beta);
  }
  return q;
}

}  // namespace

double beta_log_pdf(double x, double alpha, double beta) {
  if (!(x > 0.0 && x < 1.0)) {
    throw std::domain_error("beta_log_pdf: x=" + std::to_string(x) + " outside (0, 1)");
  }
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw std::domain_error("beta_log_pdf: shape parameters must be positive");
  }
  const double log_norm = std::lgamma(alpha + beta) - std::lgamma(alpha) - std::lgamma(beta);
  return log_norm + (alpha - 1.0) * std::log(x) + (beta - 1.0) * std::log1p(-x);
}

double BetaMixture::log_likelihood(std::span<const double> x) const {
  double ll = 0.0;
  if (degenerate) return ll;
  const double lw_hi = std::log(weight_hi);
  const double lw_lo = std::log1p(-weight_hi);
  for (double xi : x) {
    ll += log_mix(lw_hi + beta_log_pdf(xi, alpha_hi, beta_hi),
                  lw_lo + beta_log_pdf(xi, alpha_lo, beta_lo));
  }
  return ll;
}

double LossScaler::operator()(double loss) const {
  const double span = hi - lo;
  const double unit = span > 0.0 ? (loss - lo) / span : 0.5;
  return std::clamp(delta + (1.0 - 2.0 * delta) * unit, delta, 1.0 - delta);
}

BmmFit fit_bmm(std::span<const double> losses, int em_iters, double tol, double delta) {
  if (losses.size() < 10) {
    throw std::invalid_argument("fit_bmm: need at least 10 samples, got " +
                                std::to_string(losses.size()));
  }
  if (!(delta > 0.0 && delta < 0.5)) throw std::invalid_argument("fit_bmm: delta must be in (0, 0.5)");
  std::vector<double> sorted(losses.begin(), losses.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw std::invalid_argument("fit_bmm: non-finite loss");
  }
  std::sort(sorted.begin(), sorted.end());

  BmmFit fit;
  fit.scaler = LossScaler{sorted.front(), sorted.back(), delta};
  if (sorted.front() == sorted.back()) {
    fit.mixture.degenerate = true;
    fit.converged = true;
    return fit;
  }

  std::vector<double> x(sorted.size());
  std::transform(sorted.begin(), sorted.end(), x.begin(), fit.scaler);
  const std::size_t n = x.size();

  // Median split: above-median samples start in the high component.
  const double median = n % 2 == 1 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
  std::vector<double> resp_hi(n), resp_lo(n);
  for (std::size_t i = 0; i < n; ++i) {
    resp_hi[i] = x[i] > median ? 1.0 : 0.0;
    resp_lo[i] = 1.0 - resp_hi[i];
  }

  Shape lo{1.0, 1.0}, hi{1.0, 1.0};
  double weight_hi = 0.5;
  auto m_step = [&](bool first) {
    weight_hi = std::accumulate(resp_hi.begin(), resp_hi.end(), 0.0) / static_cast<double>(n);
    weight_hi = std::clamp(weight_hi, 1e-6, 1.0 - 1e-6);
    Shape cand{};
    if (match_moments(x, resp_lo, cand) &&
        (first || component_q(x, resp_lo, cand) >= component_q(x, resp_lo, lo))) {
      lo = cand;
    }
    if (match_moments(x, resp_hi, cand) &&
        (first || component_q(x, resp_hi, cand) >= component_q(x, resp_hi, hi))) {
      hi = cand;
    }
  };
  auto current = [&] {
    BetaMixture b;
    b.alpha_lo = lo.alpha;
    b.beta_lo = lo.beta;
    b.alpha_hi = hi.alpha;
    b.beta_hi = hi.beta;
    b.weight_hi = weight_hi;
    return b;
  };

  m_step(true);
  double ll = current().log_likelihood(x);
  fit.log_likelihood.push_back(ll);

  for (int it = 0; it < em_iters; ++it) {
    const BetaMixture b = current();
    const double lw_hi = std::log(b.weight_hi);
    const double lw_lo = std::log1p(-b.weight_hi);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = lw_hi + beta_log_pdf(x[i], b.alpha_hi, b.beta_hi);
      const double c = lw_lo + beta_log_pdf(x[i], b.alpha_lo, b.beta_lo);
      resp_hi[i] = std::exp(a - log_mix(a, c));
      resp_lo[i] = 1.0 - resp_hi[i];
    }
    m_step(false);
    const double next = current().log_likelihood(x);
    fit.log_likelihood.push_back(next);
    fit.iterations = it + 1;
    const double change = next - ll;
    ll = next;
    if (std::abs(change) < tol) {
      fit.converged = true;
      break;
    }
  }

  fit.mixture = current();

  const std::vector<double> ones(n, 1.0);
  Shape single{};
  if (match_moments(x, ones, single)) {
    const double gain = ll - component_q(x, ones, single);
    if (gain <= 1.5 * std::log(static_cast<double>(n))) {
      fit.mixture.alpha_lo = fit.mixture.alpha_hi = single.alpha;
      fit.mixture.beta_lo = fit.mixture.beta_hi = single.beta;
      fit.mixture.weight_hi = 0.5;
      fit.single_component = true;
      return fit;
    }
  }
  if (fit.mixture.mean_lo() > fit.mixture.mean_hi()) {
    std::swap(fit.mixture.alpha_lo, fit.mixture.alpha_hi);
    std::swap(fit.mixture.beta_lo, fit.mixture.beta_hi);
    fit.mixture.weight_hi = 1.0 - fit.mixture.weight_hi;
  }
  return fit;
}

double posterior(const BetaMixture& bmm, double x) {
  if (bmm.degenerate || bmm.weight_hi <= 0.0) return 0.0;
  if (bmm.weight_hi >= 1.0) return 1.0;
  const double a = std::log(bmm.weight_hi) + beta_log_pdf(x, bmm.alpha_hi, bmm.beta_hi);
  const double c = std::log1p(-bmm.weight_hi) + beta_log_pdf(x, bmm.alpha_lo, bmm.beta_lo);
  return std::clamp(std::exp(a - log_mix(a, c)), 0.0, 1.0);
}

double posterior_lo(const BetaMixture& bmm, double x) {
  if (bmm.degenerate || bmm.weight_hi <= 0.0) return 1.0;
  if (bmm.weight_hi >= 1.0) return 0.0;
  const double a = std::log(bmm.weight_hi) + beta_log_pdf(x, bmm.alpha_hi, bmm.beta_hi);
  const double c = std::log1p(-bmm.weight_hi) + beta_log_pdf(x, bmm.alpha_lo, bmm.beta_lo);
  return std::clamp(std::exp(c - log_mix(a, c)), 0.0, 1.0);
}

std::vector<double> posteriors(const BmmFit& fit, std::span<const double> losses) {
  std::vector<double> w(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) w[i] = posterior(fit.mixture, fit.scaler(losses[i]));
  return w;
}

Partition partition(std::span<const double> w, double threshold) {
  Partition out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    (w[i] > threshold ? out.mismatched : out.matched).push_back(i);
  }
  return out;
}

}  // namespace l2rm::mixture
