#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ddsde/errors.hpp"
#include "ddsde/measure.hpp"

namespace ddsde {

namespace detail {

inline double ground_cost(std::span<const double> x, std::span<const double> y, double p) {
  double r2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) r2 += (x[i] - y[i]) * (x[i] - y[i]);
  if (p == 2.0) return r2;
  const double r = std::sqrt(r2);
  return p == 1.0 ? r : std::pow(r, p);
}

inline std::vector<double> cost_matrix(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  std::vector<double> c(mu.size() * nu.size());
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t j = 0; j < nu.size(); ++j) c[i * nu.size() + j] = ground_cost(mu.point(i), nu.point(j), p);
  return c;
}

// Min-cost transportation by successive shortest paths with Dijkstra on
// reduced costs over the dense residual bipartite graph. Sources 0..n-1,
// sinks n..n+m-1; forward arcs uncapacitated, reverse arcs carry the flow.
class TransportSolver {
 public:
  TransportSolver(std::vector<double> supply, std::vector<double> demand, const std::vector<double>& cost)
      : n_(supply.size()), m_(demand.size()), supply_(std::move(supply)), demand_(std::move(demand)),
        cost_(cost), flow_(n_ * m_, 0.0), potential_(n_ + m_, 0.0) {}

  double solve() {
    const double total = std::accumulate(supply_.begin(), supply_.end(), 0.0);
    const double eps = 1e-14 * std::max(1.0, total);
    const std::size_t V = n_ + m_;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(V);
    std::vector<std::size_t> parent(V);
    std::vector<char> done(V);
    for (;;) {
      double remaining = 0.0;
      for (double s : supply_) remaining += s;
      if (remaining <= eps) break;

      std::fill(dist.begin(), dist.end(), kInf);
      std::fill(done.begin(), done.end(), 0);
      for (std::size_t i = 0; i < n_; ++i)
        if (supply_[i] > eps) {
          dist[i] = 0.0;
          parent[i] = V;
        }
      for (std::size_t it = 0; it < V; ++it) {
        std::size_t u = V;
        double best = kInf;
        for (std::size_t v = 0; v < V; ++v)
          if (!done[v] && dist[v] < best) {
            best = dist[v];
            u = v;
          }
        if (u == V) break;
        done[u] = 1;
        if (u < n_) {
          for (std::size_t j = 0; j < m_; ++j) {
            const std::size_t v = n_ + j;
            if (done[v]) continue;
            const double nd = dist[u] + cost_[u * m_ + j] + potential_[u] - potential_[v];
            if (nd < dist[v]) {
              dist[v] = nd;
              parent[v] = u;
            }
          }
        } else {
          const std::size_t j = u - n_;
          for (std::size_t i = 0; i < n_; ++i) {
            if (done[i] || flow_[i * m_ + j] <= eps) continue;
            const double nd = dist[u] - cost_[i * m_ + j] + potential_[u] - potential_[i];
            if (nd < dist[i]) {
              dist[i] = nd;
              parent[i] = u;
            }
          }
        }
      }

      std::size_t sink = V;
      double best = kInf;
      for (std::size_t j = 0; j < m_; ++j)
        if (demand_[j] > eps && dist[n_ + j] < best) {
          best = dist[n_ + j];
          sink = n_ + j;
        }
      if (sink == V) throw NumericalError("wasserstein_exact: no augmenting path (unbalanced marginals?)");

      double reach = 0.0;
      for (double d : dist)
        if (d < kInf) reach = std::max(reach, d);
      for (std::size_t v = 0; v < V; ++v) potential_[v] += (dist[v] < kInf ? dist[v] : reach);

      double push = demand_[sink - n_];
      std::size_t v = sink;
      while (parent[v] != V) {
        const std::size_t u = parent[v];
        if (u >= n_) push = std::min(push, flow_[v * m_ + (u - n_)]);
        v = u;
      }
      push = std::min(push, supply_[v]);
      if (!(push > 0.0)) throw NumericalError("wasserstein_exact: stalled augmentation");
      supply_[v] -= push;
      demand_[sink - n_] -= push;
      v = sink;
      while (parent[v] != V) {
        const std::size_t u = parent[v];
        if (u < n_) flow_[u * m_ + (v - n_)] += push;
        else flow_[v * m_ + (u - n_)] -= push;
        v = u;
      }
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < flow_.size(); ++k) acc += flow_[k] * cost_[k];
    return acc;
  }

 private:
  std::size_t n_, m_;
  std::vector<double> supply_, demand_;
  const std::vector<double>& cost_;
  std::vector<double> flow_;
  std::vector<double> potential_;
};

}  // namespace detail

/// Largest n_mu * n_nu accepted by the exact solver.
inline constexpr std::size_t kExactTransportLimit = 1'000'000;

/// d_p by solving the discrete transport problem exactly. Equal-size uniform
/// instances are solved with unit supplies (a pure assignment problem).
inline double wasserstein_exact(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  detail::require<ContractError>(mu.dim() == nu.dim(), "wasserstein_exact: dimension mismatch");
  detail::require<DomainError>(p >= 1.0, "wasserstein_exact: p must be >= 1");
  if (mu.size() * nu.size() > kExactTransportLimit) {
    throw ResourceError("wasserstein_exact: " + std::to_string(mu.size()) + " x " + std::to_string(nu.size()) +
                        " exceeds the exact-solver limit; use wasserstein_sinkhorn");
  }
  const auto cost = detail::cost_matrix(mu, nu, p);
  double total;
  if (mu.size() == nu.size() && mu.has_uniform_weights() && nu.has_uniform_weights()) {
    std::vector<double> ones(mu.size(), 1.0);
    total = detail::TransportSolver(ones, ones, cost).solve() / static_cast<double>(mu.size());
  } else {
    total = detail::TransportSolver(mu.weights(), nu.weights(), cost).solve();
  }
  total = std::max(total, 0.0);
  return p == 1.0 ? total : std::pow(total, 1.0 / p);
}

/// d_p for any dimension: quantile coupling on the line, exact solver otherwise.
inline double wasserstein(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  return mu.dim() == 1 ? wasserstein_1d(mu, nu, p) : wasserstein_exact(mu, nu, p);
}

struct SinkhornResult {
  double value = 0.0;
  std::size_t iterations = 0;
  double marginal_violation = 0.0;
  bool converged = false;
};

/// (<P, C>)^{1/p} for the entropic plan P with regularization `reg`
/// (no debiasing). Log-domain updates with geometric epsilon-scaling from the
/// cost scale down to `reg`; convergence when the L1 row-marginal violation
/// drops below 1e-8. The argument order is canonicalized so the result is
/// exactly symmetric.
inline SinkhornResult wasserstein_sinkhorn(const EmpiricalMeasure& mu_in, const EmpiricalMeasure& nu_in, double p,
                                           double reg, std::size_t max_iter = 20000) {
  detail::require<ContractError>(mu_in.dim() == nu_in.dim(), "wasserstein_sinkhorn: dimension mismatch");
  detail::require<DomainError>(reg > 0.0, "wasserstein_sinkhorn: reg must be positive");
  detail::require<DomainError>(p >= 1.0, "wasserstein_sinkhorn: p must be >= 1");
  auto less = [](const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    if (a.weights() != b.weights()) return a.weights() < b.weights();
    return a.points() < b.points();
  };
  const bool swap = less(nu_in, mu_in);
  const EmpiricalMeasure& mu = swap ? nu_in : mu_in;
  const EmpiricalMeasure& nu = swap ? mu_in : nu_in;

  const std::size_t n = mu.size(), m = nu.size();
  const auto C = detail::cost_matrix(mu, nu, p);
  std::vector<double> loga(n), logb(m);
  for (std::size_t i = 0; i < n; ++i) loga[i] = std::log(mu.weight(i));
  for (std::size_t j = 0; j < m; ++j) logb[j] = std::log(nu.weight(j));
  std::vector<double> f(n, 0.0), g(m, 0.0);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  auto lse = [](const std::vector<double>& v) {
    double mx = kNegInf;
    for (double x : v) mx = std::max(mx, x);
    if (mx == kNegInf) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
  };
  std::vector<double> row(m), col(n);
  auto update_f = [&](double eps) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) row[j] = logb[j] + (g[j] - C[i * m + j]) / eps;
      f[i] = -eps * lse(row);
    }
  };
  auto update_g = [&](double eps) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) col[i] = loga[i] + (f[i] - C[i * m + j]) / eps;
      g[j] = -eps * lse(col);
    }
  };
  auto row_violation = [&](double eps) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += std::exp(loga[i] + logb[j] + (f[i] + g[j] - C[i * m + j]) / eps);
      v += std::abs(s - mu.weight(i));
    }
    return v;
  };

  SinkhornResult res;
  const double cmax = *std::max_element(C.begin(), C.end());
  double eps = std::max(reg, cmax);
  while (eps > reg) {
    for (int k = 0; k < 20; ++k) {
      update_f(eps);
      update_g(eps);
      ++res.iterations;
    }
    eps = std::max(reg, eps * 0.5);
  }
  res.marginal_violation = std::numeric_limits<double>::infinity();
  while (res.iterations < max_iter) {
    update_f(eps);
    update_g(eps);
    ++res.iterations;
    if (res.iterations % 10 == 0 || res.iterations >= max_iter) {
      res.marginal_violation = row_violation(eps);
      if (res.marginal_violation < 1e-8) {
        res.converged = true;
        break;
      }
    }
  }
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      cost += std::exp(loga[i] + logb[j] + (f[i] + g[j] - C[i * m + j]) / eps) * C[i * m + j];
  res.value = p == 1.0 ? cost : std::pow(cost, 1.0 / p);
  return res;
}

}  // namespace ddsde
