#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddsde/errors.hpp"
#include "ddsde/fbm.hpp"
#include "ddsde/field.hpp"

namespace ddsde {

/// T^W b sampled on t_grid x x_grid; values laid out [n_t + 1][n_x][output_dim].
struct AveragedField {
  TimeGrid t_grid{1.0, 1};
  std::size_t dim = 1;
  std::size_t output_dim = 1;
  std::vector<double> x_grid;  // row-major [n_x][dim]
  std::vector<double> values;
  std::string source;

  [[nodiscard]] std::size_t n_x() const { return x_grid.size() / dim; }
  [[nodiscard]] double at(std::size_t it, std::size_t ix, std::size_t o = 0) const {
    return values[(it * n_x() + ix) * output_dim + o];
  }
  [[nodiscard]] double& at(std::size_t it, std::size_t ix, std::size_t o = 0) {
    return values[(it * n_x() + ix) * output_dim + o];
  }

  /// A(t, x) given pointwise; used for synthetic integrands.
  static AveragedField tabulate(const TimeGrid& grid, std::vector<double> xs, std::size_t dim, std::size_t output_dim,
                                const std::function<void(double, std::span<const double>, std::span<double>)>& fn) {
    detail::require<ContractError>(dim >= 1 && !xs.empty() && xs.size() % dim == 0, "AveragedField: bad x grid");
    AveragedField a{grid, dim, output_dim, std::move(xs), {}, "tabulated"};
    a.values.assign(grid.n_points() * a.n_x() * output_dim, 0.0);
    for (std::size_t it = 0; it < grid.n_points(); ++it)
      for (std::size_t ix = 0; ix < a.n_x(); ++ix)
        fn(grid.time(it), std::span<const double>(a.x_grid.data() + ix * dim, dim),
           std::span<double>(&a.at(it, ix), output_dim));
    return a;
  }
};

/// n + 1 equispaced points covering one period [0, L] (1-D).
inline std::vector<double> periodic_x_grid(double period, std::size_t n = 256) {
  std::vector<double> xs(n + 1);
  for (std::size_t j = 0; j <= n; ++j) xs[j] = period * static_cast<double>(j) / static_cast<double>(n);
  return xs;
}

/// T^W b(t_i, x_j) = sum_k b_k e^{i k.x_j} I_k(t_i), with
/// I_k(t) = int_0^t e^{i k.W_s} ds by the trapezoid rule on the path grid.
inline AveragedField averaged_field(const SpectralField& b, const FbmPath& W, std::vector<double> x_grid,
                                    std::string source = {}) {
  const std::size_t dim = b.dim(), od = b.output_dim();
  detail::require<ContractError>(W.dim == dim, "averaged_field: path and field dimensions differ");
  detail::require<ContractError>(!x_grid.empty() && x_grid.size() % dim == 0, "averaged_field: bad x grid");
  const TimeGrid& grid = W.grid;
  const std::size_t nt = grid.n_points(), nx = x_grid.size() / dim;
  AveragedField out{grid, dim, od, std::move(x_grid), std::vector<double>(nt * nx * od, 0.0), std::move(source)};
  if (b.blocks().empty()) return out;

  std::vector<Wavevector> ks;
  std::vector<complex> coeffs;
  std::vector<double> weight;
  for (const auto& blk : b.blocks())
    for (std::size_t m = 0; m < blk.n_modes(); ++m) {
      ks.push_back(blk.wavevectors[m]);
      weight.push_back(blk.level < 0 ? 1.0 : 2.0);
      coeffs.insert(coeffs.end(), blk.coeffs.begin() + static_cast<long>(m * od),
                    blk.coeffs.begin() + static_cast<long>((m + 1) * od));
    }
  const std::size_t nm = ks.size();
  const double w = 2.0 * std::numbers::pi / b.period();
  const auto kmax = b.max_abs_wavenumber();

  // e^{i k.y} for every mode from per-axis power tables.
  std::array<std::vector<complex>, kMaxFieldDim> pw;
  for (std::size_t i = 0; i < dim; ++i) pw[i].resize(static_cast<std::size_t>(kmax[i]) + 1);
  auto phases = [&](auto coord, std::vector<complex>& e) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double theta = w * coord(i);
      const complex z = std::polar(1.0, theta);
      auto& p = pw[i];
      p[0] = 1.0;
      for (std::size_t m = 1; m < p.size(); ++m)
        p[m] = (m % 64 == 0) ? std::polar(1.0, theta * static_cast<double>(m)) : p[m - 1] * z;
    }
    for (std::size_t q = 0; q < nm; ++q) {
      complex v = 1.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const int ki = ks[q][i];
        if (ki > 0) v *= pw[i][static_cast<std::size_t>(ki)];
        else if (ki < 0) v *= std::conj(pw[i][static_cast<std::size_t>(-ki)]);
      }
      e[q] = v;
    }
  };

  // Er/Ei: [nm][nx] spatial phases; Pr/Pi: [nt][nm] = Re/Im of c_k I_k(t).
  Eigen::MatrixXd Er(nm, nx), Ei(nm, nx);
  std::vector<complex> e(nm), e_prev(nm);
  for (std::size_t j = 0; j < nx; ++j) {
    phases([&](std::size_t i) { return out.x_grid[j * dim + i]; }, e);
    for (std::size_t q = 0; q < nm; ++q) {
      Er(static_cast<long>(q), static_cast<long>(j)) = weight[q] * e[q].real();
      Ei(static_cast<long>(q), static_cast<long>(j)) = weight[q] * e[q].imag();
    }
  }
  const double half_dt = 0.5 * grid.dt();
  std::vector<complex> I(nm, 0.0);
  for (std::size_t o = 0; o < od; ++o) {
    Eigen::MatrixXd Pr = Eigen::MatrixXd::Zero(static_cast<long>(nt), static_cast<long>(nm));
    Eigen::MatrixXd Pi = Pr;
    std::fill(I.begin(), I.end(), 0.0);
    phases([&](std::size_t i) { return W.at(i, 0); }, e_prev);
    for (std::size_t it = 1; it < nt; ++it) {
      phases([&](std::size_t i) { return W.at(i, it); }, e);
      for (std::size_t q = 0; q < nm; ++q) {
        I[q] += half_dt * (e_prev[q] + e[q]);
        const complex v = coeffs[q * od + o] * I[q];
        Pr(static_cast<long>(it), static_cast<long>(q)) = v.real();
        Pi(static_cast<long>(it), static_cast<long>(q)) = v.imag();
      }
      std::swap(e, e_prev);
    }
    const Eigen::MatrixXd V = Pr * Er - Pi * Ei;
    for (std::size_t it = 0; it < nt; ++it)
      for (std::size_t j = 0; j < nx; ++j) out.at(it, j, o) = V(static_cast<long>(it), static_cast<long>(j));
  }
  return out;
}

namespace detail {

// Cubic Lagrange interpolation of A(t_it, .) at x on a sorted 1-D grid.
inline void interpolate_cubic(const AveragedField& A, std::size_t it, double x, std::span<double> out) {
  const auto& xs = A.x_grid;
  const std::size_t n = xs.size();
  if (x < xs.front() || x > xs.back())
    throw DomainError("nonlinear_young_integral: theta = " + std::to_string(x) +
                      " lies outside the interpolation hull [" + std::to_string(xs.front()) + ", " +
                      std::to_string(xs.back()) + "] (extrapolation)");
  const std::size_t od = A.output_dim;
  if (n == 1) {
    for (std::size_t o = 0; o < od; ++o) out[o] = A.at(it, 0, o);
    return;
  }
  std::size_t hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
  hi = std::clamp<std::size_t>(hi, 1, n - 1);
  const std::size_t npts = std::min<std::size_t>(4, n);
  std::size_t lo = hi >= 2 ? hi - 2 : 0;
  lo = std::min(lo, n - npts);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t a = lo; a < lo + npts; ++a) {
    double l = 1.0;
    for (std::size_t c = lo; c < lo + npts; ++c)
      if (c != a) l *= (x - xs[c]) / (xs[a] - xs[c]);
    for (std::size_t o = 0; o < od; ++o) out[o] += l * A.at(it, a, o);
  }
}

}  // namespace detail

/// Riemann sums sum_{[u,v]} A_{u,v}(theta_u) over the dyadic partition of
/// [t_begin, t_end] with stride (i_end - i_begin) / 2^level grid steps. The
/// result holds one value per grid time in [t_begin, t_end]; grid times inside
/// a partition interval use the partial increment A_{u,t}(theta_u).
/// Layout: [(i_end - i_begin) + 1][output_dim].
inline std::vector<double> nonlinear_young_integral(const AveragedField& A, std::span<const double> theta,
                                                    unsigned partition_level, std::size_t i_begin,
                                                    std::size_t i_end) {
  detail::require<ContractError>(A.dim == 1, "nonlinear_young_integral: only 1-D integrands are supported");
  detail::require<ContractError>(theta.size() == A.t_grid.n_points(),
                                 "nonlinear_young_integral: theta must live on the integrand's time grid");
  detail::require<ContractError>(i_begin < i_end && i_end < A.t_grid.n_points(),
                                 "nonlinear_young_integral: bad time window");
  const std::size_t span_steps = i_end - i_begin;
  const std::size_t parts = std::size_t{1} << partition_level;
  detail::require<ContractError>(parts <= span_steps && span_steps % parts == 0,
                                 "nonlinear_young_integral: the partition must refine into the time grid");
  const std::size_t stride = span_steps / parts;
  const std::size_t od = A.output_dim;
  std::vector<double> out((span_steps + 1) * od, 0.0);
  std::vector<double> a_u(od), a_v(od), acc(od, 0.0);
  for (std::size_t u = i_begin; u < i_end; u += stride) {
    detail::interpolate_cubic(A, u, theta[u], a_u);
    for (std::size_t s = 1; s <= stride; ++s) {
      detail::interpolate_cubic(A, u + s, theta[u], a_v);
      for (std::size_t o = 0; o < od; ++o) out[(u + s - i_begin) * od + o] = acc[o] + (a_v[o] - a_u[o]);
    }
    for (std::size_t o = 0; o < od; ++o) acc[o] = out[(u + stride - i_begin) * od + o];
  }
  return out;
}

inline std::vector<double> nonlinear_young_integral(const AveragedField& A, std::span<const double> theta,
                                                    unsigned partition_level) {
  return nonlinear_young_integral(A, theta, partition_level, 0, A.t_grid.n_steps());
}

struct ExponentFit {
  double gamma_hat = 0.0;
  double r2 = 0.0;
  double intercept = 0.0;
  std::size_t n_scales = 0;
  bool trimmed = false;
};

/// Least-squares slope of log(value) against log(scale).
inline ExponentFit estimate_holder_exponent(std::span<const std::pair<double, double>> pairs) {
  detail::require<ContractError>(pairs.size() >= 4, "estimate_holder_exponent: need at least 4 scales");
  const double n = static_cast<double>(pairs.size());
  double mx = 0, my = 0;
  for (const auto& [s, v] : pairs) {
    detail::require<DomainError>(s > 0.0 && v > 0.0, "estimate_holder_exponent: scales and values must be positive");
    mx += std::log(s);
    my += std::log(v);
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [s, v] : pairs) {
    const double dx = std::log(s) - mx, dy = std::log(v) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  detail::require<DomainError>(sxx > 0.0, "estimate_holder_exponent: scales must differ");
  ExponentFit fit;
  fit.gamma_hat = sxy / sxx;
  fit.intercept = my - fit.gamma_hat * mx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  fit.n_scales = pairs.size();
  return fit;
}

/// estimate_holder_exponent with the fixed discretization-floor rule: when
/// r^2 < 0.98 the two finest scales are dropped once (if >= 4 remain).
inline ExponentFit fit_holder_exponent(std::vector<std::pair<double, double>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  ExponentFit fit = estimate_holder_exponent(pairs);
  if (fit.r2 < 0.98 && pairs.size() >= 6) {
    fit = estimate_holder_exponent(std::span(pairs).subspan(2));
    fit.trimmed = true;
  }
  return fit;
}

/// Lags 2^0, 2^1, ... not exceeding max_lag.
inline std::vector<std::size_t> dyadic_lags(std::size_t max_lag) {
  std::vector<std::size_t> lags;
  for (std::size_t h = 1; h <= max_lag; h *= 2) lags.push_back(h);
  return lags;
}

/// Mean squared increment E|f_{i+h} - f_i|^2 over all start indices, per lag.
inline std::vector<double> mean_square_increments(std::span<const double> f, std::span<const std::size_t> lags) {
  std::vector<double> out;
  out.reserve(lags.size());
  for (std::size_t h : lags) {
    detail::require<ContractError>(h >= 1 && h < f.size(), "mean_square_increments: lag out of range");
    double acc = 0.0;
    for (std::size_t i = 0; i + h < f.size(); ++i) acc += (f[i + h] - f[i]) * (f[i + h] - f[i]);
    out.push_back(acc / static_cast<double>(f.size() - h));
  }
  return out;
}

/// Same for an averaged field, pooled over x points and output components.
inline std::vector<double> mean_square_increments(const AveragedField& A, std::span<const std::size_t> lags) {
  const std::size_t nt = A.t_grid.n_points(), nx = A.n_x(), od = A.output_dim;
  std::vector<double> out;
  for (std::size_t h : lags) {
    detail::require<ContractError>(h >= 1 && h < nt, "mean_square_increments: lag out of range");
    double acc = 0.0;
    for (std::size_t it = 0; it + h < nt; ++it)
      for (std::size_t j = 0; j < nx * od; ++j) {
        const double d = A.values[(it + h) * nx * od + j] - A.values[it * nx * od + j];
        acc += d * d;
      }
    out.push_back(acc / static_cast<double>((nt - h) * nx * od));
  }
  return out;
}

/// (lag * dt, sqrt(mean square)) pairs ready for exponent fitting.
inline std::vector<std::pair<double, double>> rms_moduli(std::span<const double> mean_squares,
                                                         std::span<const std::size_t> lags, double dt) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < lags.size(); ++i)
    out.emplace_back(static_cast<double>(lags[i]) * dt, std::sqrt(mean_squares[i]));
  return out;
}

}  // namespace ddsde
