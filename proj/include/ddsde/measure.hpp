#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ddsde/errors.hpp"
#include "ddsde/fbm.hpp"
#include "ddsde/field.hpp"

namespace ddsde {

/// Weighted point cloud in R^d; points are stored row-major [n][d].
class EmpiricalMeasure {
 public:
  static constexpr double kWeightTolerance = 1e-12;

  EmpiricalMeasure(std::size_t dim, std::vector<double> points, std::vector<double> weights)
      : dim_(dim), points_(std::move(points)), weights_(std::move(weights)) {
    detail::require<ContractError>(dim_ >= 1, "EmpiricalMeasure: dimension must be >= 1");
    detail::require<ContractError>(!weights_.empty(), "EmpiricalMeasure: need at least one atom");
    detail::require<ContractError>(points_.size() == weights_.size() * dim_,
                                   "EmpiricalMeasure: points/weights size mismatch");
    double total = 0.0;
    for (double w : weights_) {
      detail::require<ContractError>(w >= 0.0 && std::isfinite(w), "EmpiricalMeasure: weights must be nonnegative");
      total += w;
    }
    detail::require<ContractError>(std::abs(total - 1.0) <= kWeightTolerance,
                                   "EmpiricalMeasure: weights must sum to 1 (got " + std::to_string(total) + ")");
    for (double x : points_)
      detail::require<ContractError>(std::isfinite(x), "EmpiricalMeasure: non-finite point");
  }

  static EmpiricalMeasure uniform(std::size_t dim, std::vector<double> points) {
    detail::require<ContractError>(dim >= 1 && !points.empty() && points.size() % dim == 0,
                                   "EmpiricalMeasure::uniform: bad point array");
    const std::size_t n = points.size() / dim;
    return {dim, std::move(points), std::vector<double>(n, 1.0 / static_cast<double>(n))};
  }

  /// Rescales nonnegative weights to sum to one.
  static EmpiricalMeasure normalized(std::size_t dim, std::vector<double> points, std::vector<double> weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    detail::require<ContractError>(total > 0.0, "EmpiricalMeasure::normalized: zero total weight");
    for (auto& w : weights) w /= total;
    return {dim, std::move(points), std::move(weights)};
  }

  static EmpiricalMeasure dirac(std::span<const double> x) {
    return {x.size(), std::vector<double>(x.begin(), x.end()), {1.0}};
  }

  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] std::size_t size() const { return weights_.size(); }
  [[nodiscard]] std::span<const double> point(std::size_t i) const { return {points_.data() + i * dim_, dim_}; }
  [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }
  [[nodiscard]] const std::vector<double>& points() const { return points_; }
  [[nodiscard]] const std::vector<double>& weights() const { return weights_; }

  [[nodiscard]] bool has_uniform_weights() const {
    return std::all_of(weights_.begin(), weights_.end(), [&](double w) { return w == weights_.front(); });
  }

  [[nodiscard]] EmpiricalMeasure translated(std::span<const double> shift) const {
    detail::require<ContractError>(shift.size() == dim_, "translated: shift dimension mismatch");
    EmpiricalMeasure out = *this;
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t c = 0; c < dim_; ++c) out.points_[i * dim_ + c] += shift[c];
    return out;
  }

  [[nodiscard]] std::vector<double> mean() const {
    std::vector<double> m(dim_, 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t c = 0; c < dim_; ++c) m[c] += weights_[i] * points_[i * dim_ + c];
    return m;
  }

  friend bool operator==(const EmpiricalMeasure&, const EmpiricalMeasure&) = default;

 private:
  std::size_t dim_;
  std::vector<double> points_;
  std::vector<double> weights_;
};

/// One empirical measure per grid time.
struct MeasureFlow {
  TimeGrid grid;
  std::vector<EmpiricalMeasure> measures;

  MeasureFlow(TimeGrid g, std::vector<EmpiricalMeasure> m) : grid(g), measures(std::move(m)) {
    detail::require<ContractError>(measures.size() == grid.n_points(),
                                   "MeasureFlow: need one measure per grid point");
    for (const auto& mu : measures)
      detail::require<ContractError>(mu.dim() == measures.front().dim(), "MeasureFlow: mixed dimensions");
  }

  [[nodiscard]] std::size_t dim() const { return measures.front().dim(); }
  [[nodiscard]] const EmpiricalMeasure& at(std::size_t i) const { return measures[i]; }
};

/// (integral |x|^p dmu)^{1/p}, Euclidean norm on R^d.
inline double moment_norm(const EmpiricalMeasure& mu, double p) {
  detail::require<DomainError>(p >= 1.0, "moment_norm: p must be >= 1");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double r2 = 0.0;
    for (double x : mu.point(i)) r2 += x * x;
    acc += mu.weight(i) * std::pow(std::sqrt(r2), p);
  }
  return std::pow(acc, 1.0 / p);
}

/// d_p on the line through the monotone coupling: the quantile functions are
/// piecewise constant, so integral_0^1 |F^{-1}(u) - G^{-1}(u)|^p du is a
/// finite sum over the merged breakpoints.
inline double wasserstein_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  detail::require<ContractError>(mu.dim() == 1 && nu.dim() == 1, "wasserstein_1d: measures must be one-dimensional");
  detail::require<DomainError>(p >= 1.0, "wasserstein_1d: p must be >= 1");
  auto order = [](const EmpiricalMeasure& m) {
    std::vector<std::size_t> idx(m.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return m.points()[a] < m.points()[b]; });
    return idx;
  };
  const auto a = order(mu);
  const auto b = order(nu);
  std::size_t i = 0, j = 0;
  double ra = mu.weight(a[0]), rb = nu.weight(b[0]);
  double acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double step = std::min(ra, rb);
    const double gap = std::abs(mu.points()[a[i]] - nu.points()[b[j]]);
    if (step > 0.0) acc += step * (p == 1.0 ? gap : std::pow(gap, p));
    ra -= step;
    rb -= step;
    if (ra <= 0.0 && ++i < a.size()) ra = mu.weight(a[i]);
    if (rb <= 0.0 && ++j < b.size()) rb = nu.weight(b[j]);
  }
  return p == 1.0 ? acc : std::pow(acc, 1.0 / p);
}

/// sum_j w_j exp(sign * 2 pi i k.x_j / L) for each wave number.
inline std::vector<complex> empirical_characteristic(const EmpiricalMeasure& mu, std::span<const Wavevector> ks,
                                                     std::size_t k_dim, std::size_t k_offset, double period,
                                                     double sign) {
  detail::require<ContractError>(k_dim == mu.dim(), "empirical_characteristic: dimension mismatch");
  std::array<int, kMaxFieldDim> kmax{};
  for (const auto& k : ks)
    for (std::size_t i = 0; i < k_dim; ++i) kmax[i] = std::max(kmax[i], std::abs(k[k_offset + i]));
  std::array<std::vector<complex>, kMaxFieldDim> pw;
  for (std::size_t i = 0; i < k_dim; ++i) pw[i].resize(static_cast<std::size_t>(kmax[i]) + 1);
  std::vector<complex> phi(ks.size(), 0.0);
  const double w = sign * 2.0 * std::numbers::pi / period;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    const auto x = mu.point(j);
    for (std::size_t i = 0; i < k_dim; ++i) {
      const double theta = w * x[i];
      const complex z = std::polar(1.0, theta);
      auto& p = pw[i];
      p[0] = 1.0;
      for (std::size_t m = 1; m < p.size(); ++m)
        p[m] = (m % 64 == 0) ? std::polar(1.0, theta * static_cast<double>(m)) : p[m - 1] * z;
    }
    const double wj = mu.weight(j);
    for (std::size_t q = 0; q < ks.size(); ++q) {
      complex e = wj;
      for (std::size_t i = 0; i < k_dim; ++i) {
        const int ki = ks[q][k_offset + i];
        if (ki > 0) e *= pw[i][static_cast<std::size_t>(ki)];
        else if (ki < 0) e *= std::conj(pw[i][static_cast<std::size_t>(-ki)]);
      }
      phi[q] += e;
    }
  }
  return phi;
}

/// b * mu as a spectral field: b_hat(k) times sum_j w_j exp(-2 pi i k.x_j / L).
/// Points are effectively reduced modulo the period.
inline SpectralField convolve_field(const SpectralField& b, const EmpiricalMeasure& mu) {
  detail::require<ContractError>(b.dim() == mu.dim(), "convolve_field: field and measure dimensions differ");
  std::vector<Wavevector> ks;
  ks.reserve(b.n_modes());
  for (const auto& blk : b.blocks()) ks.insert(ks.end(), blk.wavevectors.begin(), blk.wavevectors.end());
  const auto phi = empirical_characteristic(mu, ks, b.dim(), 0, b.period(), -1.0);
  std::size_t q = 0;
  return b.map_modes([&](const Wavevector&, std::span<complex> c) {
    for (auto& v : c) v *= phi[q];
    ++q;
  });
}

}  // namespace ddsde
