#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ddsde/errors.hpp"
#include "ddsde/field.hpp"
#include "ddsde/measure.hpp"
#include "ddsde/rng.hpp"
#include "ddsde/transport.hpp"

namespace ddsde {

/// Nonnegative scalar factor h_t: constant, or tabulated on a TimeGrid and
/// linearly interpolated.
class TimeProfile {
 public:
  TimeProfile() = default;

  static TimeProfile constant(double value) {
    detail::require<ContractError>(value >= 0.0, "TimeProfile: values must be nonnegative");
    TimeProfile p;
    p.constant_ = value;
    return p;
  }

  static TimeProfile tabulated(const TimeGrid& grid, std::vector<double> values) {
    detail::require<ContractError>(values.size() == grid.n_points(), "TimeProfile: one value per grid point");
    for (double v : values) detail::require<ContractError>(v >= 0.0, "TimeProfile: values must be nonnegative");
    TimeProfile p;
    p.grid_ = grid;
    p.values_ = std::move(values);
    return p;
  }

  [[nodiscard]] bool is_constant() const { return !grid_.has_value(); }
  [[nodiscard]] double constant_value() const { return constant_; }
  [[nodiscard]] const std::optional<TimeGrid>& grid() const { return grid_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }

  double operator()(double t) const {
    if (!grid_) return constant_;
    const double pos = std::clamp(t / grid_->dt(), 0.0, static_cast<double>(grid_->n_steps()));
    const auto i = std::min(static_cast<std::size_t>(pos), grid_->n_steps() - 1);
    const double frac = pos - static_cast<double>(i);
    return (1.0 - frac) * values_[i] + frac * values_[i + 1];
  }

  [[nodiscard]] double sup() const {
    return grid_ ? *std::max_element(values_.begin(), values_.end()) : constant_;
  }

 private:
  double constant_ = 1.0;
  std::optional<TimeGrid> grid_;
  std::vector<double> values_;
};

struct ZeroDrift {
  std::size_t dim = 1;
  double period = 2.0 * std::numbers::pi;
};

/// B(mu) = kernel * mu + external.
struct ConvolutionalDrift {
  SpectralField kernel;
  SpectralField external;
};

/// B(mu)(x) = integral kernel(x, y) mu(dy); kernel lives on R^{2d} with the
/// x coordinates first.
struct BilinearKernelDrift {
  SpectralField kernel;
};

enum class StatisticKind { Mean, Moment };

/// B(mu)(x) = base(x - s(mu)) with s the mean, or the p-th moment norm
/// repeated along every axis.
struct StatisticDrift {
  SpectralField base;
  StatisticKind statistic = StatisticKind::Mean;
  double moment_p = 2.0;
};

using DriftVariant = std::variant<ZeroDrift, ConvolutionalDrift, BilinearKernelDrift, StatisticDrift>;

class DriftSpec {
 public:
  DriftSpec(DriftVariant v, TimeProfile profile = {}) : variant_(std::move(v)), profile_(std::move(profile)) {
    std::visit([this](const auto& d) { validate(d); }, variant_);
  }

  static DriftSpec zero(std::size_t dim, double period) { return DriftSpec(ZeroDrift{dim, period}); }

  static DriftSpec convolutional(SpectralField kernel, std::optional<SpectralField> external = std::nullopt,
                                 TimeProfile profile = {}) {
    SpectralField ext = external ? *external : zero_field(kernel.dim(), kernel.period(), kernel.output_dim());
    return DriftSpec(ConvolutionalDrift{std::move(kernel), std::move(ext)}, std::move(profile));
  }

  [[nodiscard]] const DriftVariant& variant() const { return variant_; }
  [[nodiscard]] const TimeProfile& profile() const { return profile_; }
  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] double period() const { return period_; }

  [[nodiscard]] std::string tag() const {
    constexpr const char* names[] = {"zero", "convolutional", "bilinear", "statistic"};
    return names[variant_.index()];
  }

  [[nodiscard]] DriftSpec with_profile(TimeProfile p) const { return DriftSpec(variant_, std::move(p)); }

 private:
  void validate(const ZeroDrift& z) {
    detail::require<ContractError>(z.dim >= 1 && z.dim <= kMaxFieldDim, "ZeroDrift: bad dimension");
    dim_ = z.dim;
    period_ = z.period;
  }
  void validate(const ConvolutionalDrift& c) {
    detail::require<ContractError>(c.kernel.same_domain(c.external),
                                   "ConvolutionalDrift: kernel and external fields must share dimension and period");
    detail::require<ContractError>(c.kernel.output_dim() == c.kernel.dim(),
                                   "ConvolutionalDrift: fields must be R^d-valued");
    dim_ = c.kernel.dim();
    period_ = c.kernel.period();
  }
  void validate(const BilinearKernelDrift& b) {
    const std::size_t d = b.kernel.output_dim();
    detail::require<ContractError>(b.kernel.dim() == 2 * d,
                                   "BilinearKernelDrift: kernel must live on R^{2d} with R^d values");
    dim_ = d;
    period_ = b.kernel.period();
  }
  void validate(const StatisticDrift& s) {
    detail::require<ContractError>(s.base.output_dim() == s.base.dim(), "StatisticDrift: base must be R^d-valued");
    detail::require<ContractError>(s.moment_p >= 1.0, "StatisticDrift: moment order must be >= 1");
    dim_ = s.base.dim();
    period_ = s.base.period();
  }

  DriftVariant variant_;
  TimeProfile profile_;
  std::size_t dim_ = 1;
  double period_ = 1.0;
};

namespace detail {

inline SpectralField bilinear_slice(const SpectralField& kernel, const EmpiricalMeasure& mu) {
  const std::size_t d = kernel.output_dim();
  std::vector<Wavevector> ks;
  for (const auto& blk : kernel.blocks()) ks.insert(ks.end(), blk.wavevectors.begin(), blk.wavevectors.end());
  // exp(+i k_y . y) averaged against mu
  const auto phi = empirical_characteristic(mu, ks, d, d, kernel.period(), +1.0);
  FieldBuilder out(d, kernel.period(), d);
  std::vector<complex> c(d), cc(d);
  std::size_t q = 0;
  for (const auto& blk : kernel.blocks())
    for (std::size_t m = 0; m < blk.n_modes(); ++m, ++q) {
      const auto& k = blk.wavevectors[m];
      Wavevector kx{}, neg_kx{};
      for (std::size_t i = 0; i < d; ++i) {
        kx[i] = k[i];
        neg_kx[i] = -k[i];
      }
      for (std::size_t o = 0; o < d; ++o) c[o] = blk.coeffs[m * d + o] * phi[q];
      if (blk.level < 0) {
        out.add(kx, c);
        continue;
      }
      // The stored mode and its implicit conjugate both contribute.
      for (std::size_t o = 0; o < d; ++o) cc[o] = std::conj(c[o]);
      if (is_zero(kx, d)) {
        out.add(kx, c);
        out.add(kx, cc);
      } else {
        // FieldBuilder folds non-canonical wave numbers by conjugation.
        out.add(kx, c);
      }
    }
  return out.build();
}

}  // namespace detail

/// b^mu_t := B_t(., mu) as a spectral field on R^d.
inline SpectralField effective_field(const DriftSpec& drift, const EmpiricalMeasure& mu, double t) {
  detail::require<ContractError>(mu.dim() == drift.dim(), "effective_field: measure and drift dimensions differ");
  const double h = drift.profile()(t);
  const auto& v = drift.variant();
  SpectralField out = std::visit(
      [&](const auto& d) -> SpectralField {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ZeroDrift>) {
          return zero_field(d.dim, d.period, d.dim);
        } else if constexpr (std::is_same_v<T, ConvolutionalDrift>) {
          SpectralField conv = convolve_field(d.kernel, mu);
          return d.external.blocks().empty() ? conv : conv + d.external;
        } else if constexpr (std::is_same_v<T, BilinearKernelDrift>) {
          return detail::bilinear_slice(d.kernel, mu);
        } else {
          std::vector<double> shift;
          if (d.statistic == StatisticKind::Mean) {
            shift = mu.mean();
          } else {
            shift.assign(mu.dim(), moment_norm(mu, d.moment_p));
          }
          return translated(d.base, shift);
        }
      },
      v);
  return h == 1.0 ? out : scaled(out, h);
}

struct RegimeParams {
  double H = 0.5;
  double alpha = 0.0;
  double q = std::numeric_limits<double>::infinity();
  double p = 1.0;
  /// Time-Hoelder exponent of the drift (H > 1/2 class); defaults to H.
  std::optional<double> beta = std::nullopt;
};

enum class Regime { HolderClass, BesovClass, Inadmissible };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::HolderClass: return "holder";
    case Regime::BesovClass: return "besov";
    default: return "inadmissible";
  }
}

struct RegimeDecision {
  Regime regime = Regime::Inadmissible;
  bool admissible = false;
  double threshold = 0.0;
  double margin = 0.0;
  std::string reason;
};

/// Well-posedness regime for (H, alpha, q, p, beta):
///   H > 1/2:  alpha > 1 - 1/(2H), alpha in (0,1), beta >= H;
///   H <= 1/2: alpha > 1 + 1/(H q) - 1/(2H) with q in (2, inf].
inline RegimeDecision regime_gate(const RegimeParams& prm) {
  detail::require<DomainError>(prm.H > 0.0 && prm.H < 1.0, "regime_gate: H must lie in (0, 1)");
  RegimeDecision out;
  if (prm.H > 0.5) {
    out.threshold = 1.0 - 1.0 / (2.0 * prm.H);
    out.margin = prm.alpha - out.threshold;
    const double beta = prm.beta.value_or(prm.H);
    if (out.margin <= 0.0) out.reason = "alpha <= 1 - 1/(2H)";
    else if (prm.alpha >= 1.0) out.reason = "alpha must be < 1 for the Hoelder class";
    else if (beta < prm.H) out.reason = "time regularity beta < H";
    else if (prm.p < 1.0) out.reason = "p < 1";
    else {
      out.regime = Regime::HolderClass;
      out.admissible = true;
    }
    return out;
  }
  const double inv_q = std::isinf(prm.q) ? 0.0 : 1.0 / prm.q;
  out.threshold = 1.0 + inv_q / prm.H - 1.0 / (2.0 * prm.H);
  out.margin = prm.alpha - out.threshold;
  if (!(prm.q > 2.0)) out.reason = "q must lie in (2, inf]";
  else if (out.margin <= 0.0) out.reason = "alpha <= 1 + 1/(Hq) - 1/(2H)";
  else if (prm.p < 1.0) out.reason = "p < 1";
  else {
    out.regime = Regime::BesovClass;
    out.admissible = true;
  }
  return out;
}

struct ProbePair {
  EmpiricalMeasure mu;
  EmpiricalMeasure nu;
  std::string family;
};

/// Probe families: point masses, Gaussian clouds at several scales (shifted
/// and resampled), and adversarial two-point pairs at distances 1e-3 .. 1.
inline std::vector<ProbePair> make_probe_pairs(std::size_t dim, std::size_t count, RngStream rng,
                                               double spread = 1.0) {
  std::vector<ProbePair> out;
  out.reserve(count);
  const double two_point_gaps[] = {1e-3, 1e-2, 1e-1, 1.0};
  const double scales[] = {0.1, 0.5, 1.0, 2.0};
  auto random_point = [&](double s) {
    std::vector<double> x(dim);
    for (auto& c : x) c = s * rng.normal();
    return x;
  };
  for (std::size_t i = 0; out.size() < count; ++i) {
    switch (i % 4) {
      case 0: {
        auto x = random_point(spread);
        auto y = x;
        const double r = std::pow(10.0, rng.uniform(-3.0, 0.0));
        auto dir = random_point(1.0);
        double nrm = 0.0;
        for (double c : dir) nrm += c * c;
        nrm = std::sqrt(nrm);
        for (std::size_t c = 0; c < dim; ++c) y[c] += r * dir[c] / nrm;
        out.push_back({EmpiricalMeasure::dirac(x), EmpiricalMeasure::dirac(y), "dirac"});
        break;
      }
      case 1: {
        const double s = scales[(i / 4) % 4] * spread;
        const std::size_t n = 64;
        std::vector<double> a(n * dim), b(n * dim);
        const auto shift = random_point(0.5 * spread);
        for (std::size_t j = 0; j < n * dim; ++j) a[j] = s * rng.normal();
        for (std::size_t j = 0; j < n * dim; ++j) b[j] = s * rng.normal() + shift[j % dim];
        out.push_back({EmpiricalMeasure::uniform(dim, a), EmpiricalMeasure::uniform(dim, b), "gaussian"});
        break;
      }
      case 2: {
        const double gap = two_point_gaps[(i / 4) % 4];
        auto x = random_point(spread);
        auto y = random_point(spread);
        auto y2 = y;
        y2[0] += gap;
        std::vector<double> a = x, b = x;
        a.insert(a.end(), y.begin(), y.end());
        b.insert(b.end(), y2.begin(), y2.end());
        out.push_back({EmpiricalMeasure::uniform(dim, a), EmpiricalMeasure::uniform(dim, b), "two-point"});
        break;
      }
      default: {
        const std::size_t n = 8;
        std::vector<double> pts(n * dim);
        for (auto& c : pts) c = spread * rng.normal();
        std::vector<double> wa(n), wb(n);
        for (auto& w : wa) w = rng.uniform();
        for (auto& w : wb) w = rng.uniform();
        out.push_back({EmpiricalMeasure::normalized(dim, pts, wa), EmpiricalMeasure::normalized(dim, pts, wb),
                       "reweighted"});
        break;
      }
    }
  }
  return out;
}

struct ProbeRatio {
  std::string family;
  double distance = 0.0;
  double growth = 0.0;
  double lipschitz = 0.0;
};

struct ClassReport {
  /// sup_mu ||B_t(mu)||_{B^alpha} / h_t
  double growth_ratio = 0.0;
  /// sup ||B_t(mu) - B_t(nu)||_{B^{alpha-1}} / (h_t d_p(mu, nu))
  double lipschitz_ratio = 0.0;
  /// Hoelder-class terms (H > 1/2), each with its own constant.
  double bound_ratio = 0.0;
  double space_holder_ratio = 0.0;
  double measure_holder_ratio = 0.0;
  double time_holder_ratio = 0.0;
  double fitted_constant = 0.0;
  bool certified = false;
  std::vector<ProbeRatio> probes;
};

namespace detail {

// Discrete alpha-Hoelder seminorm of a 1-D field sampled on a uniform grid.
inline double grid_space_holder(const SpectralField& f, double alpha) {
  if (f.dim() != 1 || f.blocks().empty()) return 0.0;
  const std::size_t M = grid_size_for_level(f.max_level(), 1);
  const double dx = f.period() / static_cast<double>(M);
  FieldEvaluator ev(f);
  std::vector<double> vals(M);
  for (std::size_t i = 0; i < M; ++i) {
    const double x = dx * static_cast<double>(i);
    vals[i] = ev(std::span<const double>(&x, 1))[0];
  }
  double best = 0.0;
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t lag = 1; lag <= M / 2; ++lag) {
      const double diff = std::abs(vals[(i + lag) % M] - vals[i]);
      best = std::max(best, diff / std::pow(dx * static_cast<double>(lag), alpha));
    }
  return best;
}

}  // namespace detail

/// Empirical admissibility certificate: suprema over the probe pairs of the
/// growth and Lipschitz ratios defining the drift classes at time t.
inline ClassReport check_class(const DriftSpec& drift, const RegimeParams& prm, const std::vector<ProbePair>& probes,
                               double t = 0.0) {
  detail::require<ContractError>(probes.size() >= 10, "check_class: need at least 10 probe pairs");
  ClassReport rep;
  const double h = drift.profile()(t);
  auto ratio = [](double num, double den) { return num == 0.0 ? 0.0 : (den > 0.0 ? num / den : std::numeric_limits<double>::infinity()); };
  for (const auto& pr : probes) {
    const SpectralField bmu = effective_field(drift, pr.mu, t);
    const SpectralField bnu = effective_field(drift, pr.nu, t);
    const double dist = wasserstein(pr.mu, pr.nu, prm.p);
    ProbeRatio r{pr.family, dist, 0.0, 0.0};
    r.growth = std::max(ratio(besov_norm(bmu, prm.alpha), h), ratio(besov_norm(bnu, prm.alpha), h));
    const SpectralField diff = bmu - bnu;
    if (dist > 0.0) r.lipschitz = ratio(besov_norm(diff, prm.alpha - 1.0), h * dist);
    rep.growth_ratio = std::max(rep.growth_ratio, r.growth);
    rep.lipschitz_ratio = std::max(rep.lipschitz_ratio, r.lipschitz);
    if (prm.H > 0.5) {
      rep.bound_ratio = std::max({rep.bound_ratio, sup_norm(bmu), sup_norm(bnu)});
      rep.space_holder_ratio = std::max(rep.space_holder_ratio, detail::grid_space_holder(bmu, prm.alpha));
      if (dist > 0.0) rep.measure_holder_ratio = std::max(rep.measure_holder_ratio, sup_norm(diff) / std::pow(dist, prm.alpha));
    }
    rep.probes.push_back(std::move(r));
  }
  if (prm.H > 0.5 && !drift.profile().is_constant()) {
    const auto& grid = *drift.profile().grid();
    const auto& vals = drift.profile().values();
    const double exponent = prm.alpha * prm.beta.value_or(prm.H);
    double best = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i)
      for (std::size_t j = i + 1; j < vals.size(); ++j)
        best = std::max(best, std::abs(vals[j] - vals[i]) / std::pow(grid.time(j) - grid.time(i), exponent));
    rep.time_holder_ratio = best * rep.bound_ratio / std::max(drift.profile().sup(), 1e-300);
  }
  rep.fitted_constant = std::max(rep.growth_ratio, rep.lipschitz_ratio);
  rep.certified = std::isfinite(rep.growth_ratio) && std::isfinite(rep.lipschitz_ratio);
  return rep;
}

}  // namespace ddsde
