// Exact transport by successive shortest paths on the bipartite flow network
// source -> rows -> columns -> sink. Only used to check the entropic solver,
// so clarity wins over asymptotics.

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "l2rm/ot.hpp"

namespace l2rm::ot {
namespace {

struct Arc {
  int to;
  int rev;
  std::int64_t cap;
  double cost;
};

class FlowNetwork {
 public:
  explicit FlowNetwork(int nodes) : adj_(static_cast<std::size_t>(nodes)) {}

  int add_arc(int from, int to, std::int64_t cap, double cost) {
    auto& out = adj_[static_cast<std::size_t>(from)];
    auto& in = adj_[static_cast<std::size_t>(to)];
    out.push_back(Arc{to, static_cast<int>(in.size()), cap, cost});
    in.push_back(Arc{from, static_cast<int>(out.size()) - 1, 0, -cost});
    return static_cast<int>(out.size()) - 1;
  }

  const Arc& arc(int node, int idx) const {
    return adj_[static_cast<std::size_t>(node)][static_cast<std::size_t>(idx)];
  }

  // Returns the amount of flow actually routed.
  std::int64_t min_cost_flow(int source, int sink, std::int64_t demand) {
    const std::size_t n = adj_.size();
    std::int64_t routed = 0;
    std::vector<double> dist(n);
    std::vector<int> prev_node(n), prev_arc(n);
    while (routed < demand) {
      // Bellman-Ford: residual arcs carry negative costs.
      std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
      dist[static_cast<std::size_t>(source)] = 0.0;
      for (std::size_t round = 0; round + 1 < n; ++round) {
        bool changed = false;
        for (std::size_t u = 0; u < n; ++u) {
          if (!std::isfinite(dist[u])) continue;
          for (std::size_t k = 0; k < adj_[u].size(); ++k) {
            const Arc& e = adj_[u][k];
            const auto v = static_cast<std::size_t>(e.to);
            if (e.cap > 0 && dist[u] + e.cost < dist[v] - 1e-14) {
              dist[v] = dist[u] + e.cost;
              prev_node[v] = static_cast<int>(u);
              prev_arc[v] = static_cast<int>(k);
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (!std::isfinite(dist[static_cast<std::size_t>(sink)])) break;

      std::int64_t push = demand - routed;
      for (int v = sink; v != source; v = prev_node[static_cast<std::size_t>(v)]) {
        const auto& e = adj_[static_cast<std::size_t>(prev_node[static_cast<std::size_t>(v)])]
                            [static_cast<std::size_t>(prev_arc[static_cast<std::size_t>(v)])];
        push = std::min(push, e.cap);
      }
      for (int v = sink; v != source; v = prev_node[static_cast<std::size_t>(v)]) {
        auto& e = adj_[static_cast<std::size_t>(prev_node[static_cast<std::size_t>(v)])]
                      [static_cast<std::size_t>(prev_arc[static_cast<std::size_t>(v)])];
        e.cap -= push;
        adj_[static_cast<std::size_t>(e.to)][static_cast<std::size_t>(e.rev)].cap += push;
      }
      routed += push;
    }
    return routed;
  }

 private:
  std::vector<std::vector<Arc>> adj_;
};

std::vector<std::int64_t> to_units(const Measure& mu, std::int64_t scale, const char* name) {
  std::vector<std::int64_t> units(static_cast<std::size_t>(mu.size()));
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double scaled = mu[i] * static_cast<double>(scale);
    const double rounded = std::round(scaled);
    if (std::abs(scaled - rounded) > 1e-6 * std::max(1.0, scaled)) {
      std::ostringstream os;
      os << "exact_ot_oracle: " << name << "[" << i << "]=" << mu[i]
         << " is not a multiple of 1/" << scale;
      throw std::invalid_argument(os.str());
    }
    units[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(rounded);
  }
  return units;
}

}  // namespace

TransportPlan exact_ot_oracle(const CostMatrix& cost, const Measure& p, const Measure& q,
                              const MaskMatrix& mask, std::int64_t mass_scale) {
  if (mass_scale <= 0) throw std::invalid_argument("exact_ot_oracle: mass_scale must be positive");
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();
  if (p.size() != m || q.size() != n || mask.rows() != m || mask.cols() != n) {
    throw std::invalid_argument("exact_ot_oracle: dimension mismatch");
  }
  if (m > 16 || n > 16) throw std::invalid_argument("exact_ot_oracle: instance larger than 16x16");

  const auto pu = to_units(p, mass_scale, "p");
  const auto qu = to_units(q, mass_scale, "q");
  std::int64_t p_sum = 0, q_sum = 0;
  for (auto x : pu) p_sum += x;
  for (auto x : qu) q_sum += x;
  if (p_sum != q_sum) {
    throw std::invalid_argument("exact_ot_oracle: scaled marginals do not balance (" +
                                std::to_string(p_sum) + " vs " + std::to_string(q_sum) + ")");
  }

  const int source = 0;
  const int sink = static_cast<int>(m + n + 1);
  auto row_node = [](Eigen::Index i) { return static_cast<int>(1 + i); };
  auto col_node = [m](Eigen::Index j) { return static_cast<int>(1 + m + j); };

  FlowNetwork net(static_cast<int>(m + n + 2));
  for (Eigen::Index i = 0; i < m; ++i) net.add_arc(source, row_node(i), pu[static_cast<std::size_t>(i)], 0.0);
  for (Eigen::Index j = 0; j < n; ++j) net.add_arc(col_node(j), sink, qu[static_cast<std::size_t>(j)], 0.0);
  std::vector<std::vector<int>> arc_id(static_cast<std::size_t>(m),
                                       std::vector<int>(static_cast<std::size_t>(n), -1));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!mask.allowed(i, j)) continue;
      arc_id[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          net.add_arc(row_node(i), col_node(j), p_sum, cost(i, j));
    }
  }

  const std::int64_t routed = net.min_cost_flow(source, sink, p_sum);
  if (routed != p_sum) {
    throw SolverInfeasible("exact_ot_oracle: infeasible flow (routed " + std::to_string(routed) +
                           " of " + std::to_string(p_sum) + ")");
  }

  TransportPlan out;
  out.plan = Matrix::Zero(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const int id = arc_id[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (id < 0) continue;
      const Arc& e = net.arc(row_node(i), id);
      const std::int64_t flow = p_sum - e.cap;
      out.plan(i, j) = static_cast<double>(flow) / static_cast<double>(mass_scale);
    }
  }
  out.converged = true;
  out.iterations = 0;
  const double row_err = (out.plan.rowwise().sum() - p.mass()).cwiseAbs().maxCoeff();
  const double col_err = (out.plan.colwise().sum().transpose() - q.mass()).cwiseAbs().maxCoeff();
  out.marginal_error = std::max(row_err, col_err);
  return out;
}

}  // namespace l2rm::ot
