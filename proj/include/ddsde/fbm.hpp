#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ddsde/errors.hpp"
#include "ddsde/log.hpp"
#include "ddsde/rng.hpp"

namespace ddsde {

/// Uniform grid t_i = i * T / n on [0, T].
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t n_steps) : horizon_(horizon), n_steps_(n_steps) {
    detail::require<DomainError>(horizon > 0.0 && std::isfinite(horizon),
                                 "TimeGrid: horizon must be positive and finite");
    detail::require<DomainError>(n_steps >= 1, "TimeGrid: n_steps must be >= 1");
  }

  [[nodiscard]] double horizon() const { return horizon_; }
  [[nodiscard]] std::size_t n_steps() const { return n_steps_; }
  [[nodiscard]] std::size_t n_points() const { return n_steps_ + 1; }
  [[nodiscard]] double dt() const { return horizon_ / static_cast<double>(n_steps_); }

  [[nodiscard]] double time(std::size_t i) const {
    return i == n_steps_ ? horizon_ : static_cast<double>(i) * dt();
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double horizon_;
  std::size_t n_steps_;
};

/// d independent fBm components sampled on a TimeGrid; values are stored
/// component-major, each component holding n_steps + 1 entries with W_0 = 0.
struct FbmPath {
  double hurst = 0.5;
  TimeGrid grid{1.0, 1};
  std::size_t dim = 1;
  std::vector<double> values;

  [[nodiscard]] std::span<const double> component(std::size_t c) const {
    return {values.data() + c * grid.n_points(), grid.n_points()};
  }
  [[nodiscard]] std::span<double> component(std::size_t c) {
    return {values.data() + c * grid.n_points(), grid.n_points()};
  }
  [[nodiscard]] double at(std::size_t c, std::size_t i) const {
    return values[c * grid.n_points() + i];
  }
};

namespace detail {

inline void check_hurst(double H) {
  require<DomainError>(H > 0.0 && H < 1.0, "Hurst parameter must lie in (0, 1)");
}

}  // namespace detail

/// E[W_s W_t] = (|t|^{2H} + |s|^{2H} - |t - s|^{2H}) / 2.
///
/// Note: the minus sign on the |t - s| term is the standard fBm covariance;
/// with a plus sign the kernel is not positive semi-definite and H = 1/2
/// would not reduce to min(s, t).
inline double fbm_covariance(double s, double t, double H) {
  detail::check_hurst(H);
  detail::require<DomainError>(s >= 0.0 && t >= 0.0, "fbm_covariance: times must be >= 0");
  const double h2 = 2.0 * H;
  return 0.5 * (std::pow(t, h2) + std::pow(s, h2) - std::pow(std::abs(t - s), h2));
}

/// Autocovariance of unit-spaced fractional Gaussian noise at lag k.
inline double fgn_autocovariance(long k, double H) {
  detail::check_hurst(H);
  const double h2 = 2.0 * H;
  const double kk = std::abs(static_cast<double>(k));
  return 0.5 * (std::pow(kk + 1.0, h2) - 2.0 * std::pow(kk, h2) + std::pow(std::abs(kk - 1.0), h2));
}

enum class FbmSampler { Cholesky, Circulant };

/// Exact sampler: Cholesky factor of the (Toeplitz) covariance of the grid
/// increments, cumulated into a path. The factor is computed once and reused.
class CholeskyFbmSampler {
 public:
  static constexpr std::size_t kMaxSteps = 4096;

  CholeskyFbmSampler(const TimeGrid& grid, double H) : grid_(grid), hurst_(H) {
    detail::check_hurst(H);
    const std::size_t n = grid.n_steps();
    if (n > kMaxSteps) {
      throw ResourceError("CholeskyFbmSampler: n_steps = " + std::to_string(n) +
                          " exceeds the dense factorization limit of " +
                          std::to_string(kMaxSteps) + "; use the circulant sampler");
    }
    const double scale = std::pow(grid.dt(), 2.0 * H);
    std::vector<double> acov(n);
    for (std::size_t k = 0; k < n; ++k) acov[k] = scale * fgn_autocovariance(static_cast<long>(k), H);
    Eigen::MatrixXd cov(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) cov(i, j) = acov[i > j ? i - j : j - i];
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      std::ostringstream os;
      os << "CholeskyFbmSampler: increment covariance not numerically positive definite (H=" << H
         << ", n=" << n << ", min diagonal=" << cov.diagonal().minCoeff() << ")";
      throw NumericalError(os.str());
    }
    factor_ = llt.matrixL();
  }

  [[nodiscard]] const TimeGrid& grid() const { return grid_; }
  [[nodiscard]] double hurst() const { return hurst_; }

  /// Component c is drawn from rng.split(c).
  [[nodiscard]] FbmPath sample(std::size_t dim, const RngStream& rng) const {
    const std::size_t n = grid_.n_steps();
    FbmPath path{hurst_, grid_, dim, std::vector<double>(dim * (n + 1), 0.0)};
    Eigen::VectorXd z(n);
    for (std::size_t c = 0; c < dim; ++c) {
      RngStream stream = rng.split(c);
      for (std::size_t i = 0; i < n; ++i) z[static_cast<Eigen::Index>(i)] = stream.normal();
      const Eigen::VectorXd incr = factor_.triangularView<Eigen::Lower>() * z;
      auto out = path.component(c);
      for (std::size_t i = 0; i < n; ++i) out[i + 1] = out[i] + incr[static_cast<Eigen::Index>(i)];
    }
    return path;
  }

 private:
  TimeGrid grid_;
  double hurst_;
  Eigen::MatrixXd factor_;
};

/// Davies-Harte sampler: embeds the fGn autocovariance in a circulant of size
/// 2n, whose eigenvalues are obtained by FFT. Negative eigenvalues (only ever
/// round-off for fGn) are clipped and the clipped mass is reported.
class CirculantFbmSampler {
 public:
  static constexpr double kClipTolerance = 1e-10;

  CirculantFbmSampler(const TimeGrid& grid, double H) : grid_(grid), hurst_(H) {
    detail::check_hurst(H);
    const std::size_t n = grid.n_steps();
    const std::size_t m = 2 * n;
    std::vector<std::complex<double>> row(m), eig;
    for (std::size_t k = 0; k <= n; ++k) row[k] = fgn_autocovariance(static_cast<long>(k), H);
    for (std::size_t k = n + 1; k < m; ++k) row[k] = row[m - k];
    Eigen::FFT<double> fft;
    fft.fwd(eig, row);
    sqrt_eig_.resize(m);
    double negative = 0.0, total = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double lambda = eig[k].real();
      total += std::abs(lambda);
      if (lambda < 0.0) negative += -lambda;
      sqrt_eig_[k] = std::sqrt(std::max(lambda, 0.0) / static_cast<double>(m));
    }
    clipped_mass_ = total > 0.0 ? negative / total : 0.0;
    if (clipped_mass_ > kClipTolerance) {
      log_warning("circulant embedding: clipped negative eigenvalue mass " +
                  std::to_string(clipped_mass_));
    }
  }

  [[nodiscard]] const TimeGrid& grid() const { return grid_; }
  [[nodiscard]] double hurst() const { return hurst_; }
  [[nodiscard]] double clipped_mass() const { return clipped_mass_; }

  [[nodiscard]] FbmPath sample(std::size_t dim, const RngStream& rng) const {
    const std::size_t n = grid_.n_steps();
    const std::size_t m = 2 * n;
    const double scale = std::pow(grid_.dt(), hurst_);
    FbmPath path{hurst_, grid_, dim, std::vector<double>(dim * (n + 1), 0.0)};
    std::vector<std::complex<double>> in(m), out;
    Eigen::FFT<double> fft;
    for (std::size_t c = 0; c < dim; ++c) {
      RngStream stream = rng.split(c);
      for (std::size_t k = 0; k < m; ++k) {
        const double re = stream.normal();
        const double im = stream.normal();
        in[k] = sqrt_eig_[k] * std::complex<double>(re, im);
      }
      fft.fwd(out, in);
      auto values = path.component(c);
      for (std::size_t i = 0; i < n; ++i) values[i + 1] = values[i] + scale * out[i].real();
    }
    return path;
  }

 private:
  TimeGrid grid_;
  double hurst_;
  std::vector<double> sqrt_eig_;
  double clipped_mass_ = 0.0;
};

/// Either sampler behind one interface; built once per (grid, H).
class FbmGenerator {
 public:
  FbmGenerator(const TimeGrid& grid, double H, FbmSampler kind) : kind_(kind) {
    if (kind == FbmSampler::Cholesky) {
      cholesky_.emplace_back(grid, H);
    } else {
      circulant_.emplace_back(grid, H);
    }
  }

  [[nodiscard]] FbmPath sample(std::size_t dim, const RngStream& rng) const {
    return kind_ == FbmSampler::Cholesky ? cholesky_.front().sample(dim, rng)
                                         : circulant_.front().sample(dim, rng);
  }

  [[nodiscard]] FbmSampler kind() const { return kind_; }

 private:
  FbmSampler kind_;
  std::vector<CholeskyFbmSampler> cholesky_;
  std::vector<CirculantFbmSampler> circulant_;
};

inline FbmPath sample_fbm_cholesky(const TimeGrid& grid, double H, std::size_t dim,
                                   const RngStream& rng) {
  return CholeskyFbmSampler(grid, H).sample(dim, rng);
}

inline FbmPath sample_fbm_circulant(const TimeGrid& grid, double H, std::size_t dim,
                                    const RngStream& rng) {
  return CirculantFbmSampler(grid, H).sample(dim, rng);
}

/// Discrete gamma-Hoelder seminorm max_{i<j} |f_j - f_i| / |t_j - t_i|^gamma.
inline double holder_seminorm(std::span<const double> times, std::span<const double> values,
                              double gamma) {
  detail::require<ContractError>(times.size() == values.size(),
                                 "holder_seminorm: times and values differ in length");
  detail::require<ContractError>(times.size() >= 2, "holder_seminorm: need at least 2 points");
  detail::require<ContractError>(gamma > 0.0 && gamma <= 1.0,
                                 "holder_seminorm: gamma must lie in (0, 1]");
  double best = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t j = i + 1; j < times.size(); ++j) {
      const double dt = std::abs(times[j] - times[i]);
      if (dt == 0.0) continue;
      best = std::max(best, std::abs(values[j] - values[i]) / std::pow(dt, gamma));
    }
  }
  return best;
}

}  // namespace ddsde
