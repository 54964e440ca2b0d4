#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddsde/drift.hpp"
#include "ddsde/errors.hpp"
#include "ddsde/fbm.hpp"
#include "ddsde/field.hpp"
#include "ddsde/log.hpp"
#include "ddsde/measure.hpp"
#include "ddsde/parallel.hpp"
#include "ddsde/rng.hpp"
#include "ddsde/transport.hpp"

namespace ddsde {

struct SolverConfig {
  TimeGrid grid{1.0, 256};
  std::size_t n_particles = 256;
  /// Dyadic cutoff applied to every drift field before stepping.
  std::optional<int> mollify_level;
  std::uint64_t seed = 0;
  FbmSampler sampler = FbmSampler::Circulant;
  bool common_random_numbers = true;
  /// Hurst parameter of the driving noise.
  double hurst = 0.5;
};

/// Law of xi: Gaussian N(mean, std^2 I), a point mass, or uniform on a box.
struct InitialLaw {
  enum class Kind { Gaussian, Dirac, Uniform };
  Kind kind = Kind::Gaussian;
  std::vector<double> mean;  // Gaussian centre or Dirac location; empty = origin
  double stddev = 1.0;
  std::vector<double> lo, hi;

  static InitialLaw gaussian(std::vector<double> mean, double stddev) {
    return {Kind::Gaussian, std::move(mean), stddev, {}, {}};
  }
  static InitialLaw dirac(std::vector<double> at) { return {Kind::Dirac, std::move(at), 0.0, {}, {}}; }
  static InitialLaw uniform(std::vector<double> lo, std::vector<double> hi) {
    return {Kind::Uniform, {}, 0.0, std::move(lo), std::move(hi)};
  }

  [[nodiscard]] std::string tag() const {
    switch (kind) {
      case Kind::Gaussian: return "gaussian";
      case Kind::Dirac: return "dirac";
      default: return "uniform";
    }
  }

  /// n draws, row-major [n][dim]; draw i uses rng.split(i).
  [[nodiscard]] std::vector<double> sample(std::size_t n, std::size_t dim, const RngStream& rng) const {
    auto coord = [](const std::vector<double>& v, std::size_t c) { return v.empty() ? 0.0 : v.at(c); };
    if (kind == Kind::Uniform)
      detail::require<ContractError>(lo.size() == dim && hi.size() == dim, "InitialLaw: box bounds need dim entries");
    else
      detail::require<ContractError>(mean.empty() || mean.size() == dim, "InitialLaw: location needs dim entries");
    std::vector<double> out(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
      RngStream r = rng.split(i);
      for (std::size_t c = 0; c < dim; ++c) {
        double& x = out[i * dim + c];
        switch (kind) {
          case Kind::Gaussian: x = coord(mean, c) + stddev * r.normal(); break;
          case Kind::Dirac: x = coord(mean, c); break;
          case Kind::Uniform: x = r.uniform(lo[c], hi[c]); break;
        }
      }
    }
    return out;
  }
};

/// Particle trajectories, layout [n_particles][n_steps + 1][dim].
struct Ensemble {
  TimeGrid grid{1.0, 1};
  std::size_t dim = 1;
  std::size_t n_particles = 0;
  std::vector<double> trajectories;
  std::string initial_law;
  std::uint64_t noise_seed = 0;

  [[nodiscard]] double at(std::size_t i, std::size_t it, std::size_t c = 0) const {
    return trajectories[(i * grid.n_points() + it) * dim + c];
  }
  [[nodiscard]] std::span<const double> state(std::size_t i, std::size_t it) const {
    return {trajectories.data() + (i * grid.n_points() + it) * dim, dim};
  }
  /// Positions of all particles at one time, row-major [n][dim].
  [[nodiscard]] std::vector<double> snapshot(std::size_t it) const {
    std::vector<double> out(n_particles * dim);
    for (std::size_t i = 0; i < n_particles; ++i) std::copy_n(state(i, it).begin(), dim, out.begin() + static_cast<long>(i * dim));
    return out;
  }
};

/// Uniform empirical law per grid time.
inline MeasureFlow law_flow(const Ensemble& e) {
  std::vector<EmpiricalMeasure> ms;
  ms.reserve(e.grid.n_points());
  for (std::size_t it = 0; it < e.grid.n_points(); ++it) ms.push_back(EmpiricalMeasure::uniform(e.dim, e.snapshot(it)));
  return {e.grid, std::move(ms)};
}

/// Heuristic roughness test for a field: at least three nonzero blocks whose
/// top three sup norms decay slower than 2^{-n/2}, i.e. regression of
/// log2 ||Delta_n|| on n over those blocks gives a local exponent < 1/2.
inline bool is_rough(const SpectralField& f) {
  std::vector<std::pair<int, double>> nz;
  for (const auto& [level, norm] : block_norms(f))
    if (level >= 0 && norm > 0.0) nz.emplace_back(level, norm);
  if (nz.size() < 3) return false;
  const auto top = std::span(nz).last(3);
  double mx = 0, my = 0;
  for (const auto& [n, v] : top) {
    mx += n / 3.0;
    my += std::log2(v) / 3.0;
  }
  double sxy = 0, sxx = 0;
  for (const auto& [n, v] : top) {
    sxy += (n - mx) * (std::log2(v) - my);
    sxx += (n - mx) * (n - mx);
  }
  return -sxy / sxx < 0.5;
}

inline bool drift_is_rough(const DriftSpec& drift) {
  return std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ZeroDrift>) return false;
        else if constexpr (std::is_same_v<T, ConvolutionalDrift>) return is_rough(d.kernel) || is_rough(d.external);
        else if constexpr (std::is_same_v<T, BilinearKernelDrift>) return is_rough(d.kernel);
        else return is_rough(d.base);
      },
      drift.variant());
}

namespace detail {

inline void require_mollification(bool rough, const SolverConfig& cfg) {
  if (rough && !cfg.mollify_level)
    throw ConfigError("solver: the drift has distributional (alpha < 1) content; set mollify_level");
}

inline void check_step_coupling(const SolverConfig& cfg) {
  if (!cfg.mollify_level) return;
  const double scale = std::exp2(*cfg.mollify_level) * std::pow(cfg.grid.dt(), 0.9);
  if (scale > 1.0)
    log_warning("solver: 2^mollify_level * dt^0.9 = " + std::to_string(scale) +
                " > 1; the mollified drift is under-resolved in time");
}

}  // namespace detail

/// Independent fBm paths, one per particle; path i uses split({kNoise, round, i}).
inline std::vector<FbmPath> sample_noise(const SolverConfig& cfg, std::size_t dim, std::uint64_t round = 0) {
  const FbmGenerator gen(cfg.grid, cfg.hurst, cfg.sampler);
  const RngStream base = RngStream(cfg.seed).split({stream_tag::kNoise, round});
  std::vector<FbmPath> out(cfg.n_particles);
  parallel_for(cfg.n_particles, [&](std::size_t i) { out[i] = gen.sample(dim, base.split(i)); });
  return out;
}

inline std::vector<double> sample_initial(const InitialLaw& law, const SolverConfig& cfg, std::size_t dim,
                                          std::uint64_t round = 0) {
  return law.sample(cfg.n_particles, dim, RngStream(cfg.seed).split({stream_tag::kInitial, round}));
}

/// Explicit Euler X_{i+1} = X_i + b_i(X_i) dt + (W_{t_{i+1}} - W_{t_i}) on the
/// (mollified) field flow. field_flow holds one field per step (or per grid
/// point, the last one unused); positions are never wrapped.
inline Ensemble solve_frozen_sde(std::span<const SpectralField> field_flow, std::span<const double> xi,
                                 std::span<const FbmPath> W, const SolverConfig& cfg) {
  const std::size_t n = cfg.n_particles, steps = cfg.grid.n_steps();
  detail::require<ContractError>(n >= 1, "solve_frozen_sde: n_particles must be >= 1");
  detail::require<ContractError>(field_flow.size() == steps || field_flow.size() == steps + 1,
                                 "solve_frozen_sde: need one field per time step");
  const std::size_t dim = field_flow.front().dim();
  for (const auto& f : field_flow)
    detail::require<ContractError>(f.dim() == dim && f.output_dim() == dim,
                                   "solve_frozen_sde: fields must map R^d to R^d");
  detail::require<ContractError>(xi.size() == n * dim, "solve_frozen_sde: need one initial point per particle");
  detail::require<ContractError>(W.size() == n, "solve_frozen_sde: need one noise path per particle");
  for (const auto& w : W)
    detail::require<ContractError>(w.dim == dim && w.grid == cfg.grid, "solve_frozen_sde: noise path does not match grid");
  detail::require_mollification(is_rough(field_flow.front()), cfg);
  detail::check_step_coupling(cfg);

  std::vector<SpectralField> fields;
  if (cfg.mollify_level) {
    fields.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) fields.push_back(mollify(field_flow[i], *cfg.mollify_level));
    field_flow = fields;
  }

  Ensemble e{cfg.grid, dim, n, std::vector<double>(n * cfg.grid.n_points() * dim), {}, cfg.seed};
  const double dt = cfg.grid.dt();
  std::vector<std::size_t> failed_step(n, 0);
  parallel_for(n, [&](std::size_t p) {
    double* x = e.trajectories.data() + p * cfg.grid.n_points() * dim;
    std::copy_n(xi.begin() + static_cast<long>(p * dim), dim, x);
    // Drift integral kept apart so X = xi + D + W holds exactly when D = 0.
    std::vector<double> b(dim), D(dim, 0.0);
    for (std::size_t i = 0; i < steps; ++i) {
      FieldEvaluator ev(field_flow[i]);
      ev(std::span<const double>(x + i * dim, dim), b);
      for (std::size_t c = 0; c < dim; ++c) {
        D[c] += b[c] * dt;
        const double v = xi[p * dim + c] + D[c] + W[p].at(c, i + 1);
        x[(i + 1) * dim + c] = v;
        if (!std::isfinite(v) && failed_step[p] == 0) failed_step[p] = i + 1;
      }
      if (failed_step[p] != 0) return;
    }
  });
  for (std::size_t p = 0; p < n; ++p)
    if (failed_step[p] != 0)
      throw NumericalError("solve_frozen_sde: non-finite state at step " + std::to_string(failed_step[p]) +
                           " (particle " + std::to_string(p) + ")");
  return e;
}

/// Frozen-drift solve for a single time-independent field.
inline Ensemble solve_frozen_sde(const SpectralField& b, std::span<const double> xi, std::span<const FbmPath> W,
                                 const SolverConfig& cfg) {
  std::vector<SpectralField> flow(cfg.grid.n_steps(), b);
  return solve_frozen_sde(flow, xi, W, cfg);
}

/// d_p between two measures; falls back to Sinkhorn (reg 1e-3 diam^p) past
/// the exact-solver size limit in d > 1.
inline double measure_distance(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
  if (mu.dim() == 1) return wasserstein_1d(mu, nu, p);
  if (mu.size() * nu.size() <= kExactTransportLimit) return wasserstein_exact(mu, nu, p);
  double diam2 = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t j = 0; j < nu.size(); ++j)
      diam2 = std::max(diam2, detail::ground_cost(mu.point(i), nu.point(j), 2.0));
  return wasserstein_sinkhorn(mu, nu, p, 1e-3 * std::pow(std::sqrt(diam2), p)).value;
}

/// Grid indices used for sup_t gaps: every stride-th index plus the last.
inline std::vector<std::size_t> thinned_indices(const TimeGrid& grid, std::size_t stride) {
  detail::require<ContractError>(stride >= 1, "thinned_indices: stride must be >= 1");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i <= grid.n_steps(); i += stride) idx.push_back(i);
  if (idx.back() != grid.n_steps()) idx.push_back(grid.n_steps());
  return idx;
}

inline std::size_t default_thinning(const TimeGrid& grid) { return (grid.n_steps() + 31) / 32; }

/// sup over the given indices of d_p(a_t, b_t).
inline double flow_gap(const MeasureFlow& a, const MeasureFlow& b, double p, std::span<const std::size_t> idx) {
  detail::require<ContractError>(a.grid == b.grid, "flow_gap: flows live on different grids");
  std::vector<double> d(idx.size());
  parallel_for(idx.size(), [&](std::size_t k) { d[k] = measure_distance(a.at(idx[k]), b.at(idx[k]), p); });
  return d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
}

/// b^mu_t = B_t(., mu_t) on every step of the flow's grid.
inline std::vector<SpectralField> drift_field_flow(const DriftSpec& drift, const MeasureFlow& flow) {
  const std::size_t steps = flow.grid.n_steps();
  std::vector<SpectralField> out(steps, SpectralField(drift.dim(), drift.period(), drift.dim()));
  parallel_for(steps, [&](std::size_t i) { out[i] = effective_field(drift, flow.at(i), flow.grid.time(i)); });
  return out;
}

struct PicardOptions {
  double tol = 1e-6;
  std::size_t max_iter = 30;
  double p = 1.0;
  /// Stride of the thinned time grid; 0 selects ceil(n_steps / 32).
  std::size_t thinning = 0;
  /// mu^0; defaults to the zero-drift flow (law of xi + W_t).
  std::optional<MeasureFlow> initial_flow = std::nullopt;
  /// Keep every iterate (memory ~ iterations x n_points x n_particles).
  bool keep_iterates = true;
  /// Converge on horizons T/s, 2T/s, ..., T in turn, each stage starting
  /// from the previous stage's flow.
  std::size_t horizon_stages = 1;
  std::optional<RegimeParams> regime = std::nullopt;
};

struct PicardReport {
  std::vector<MeasureFlow> iterates;
  std::vector<double> gaps;
  /// gaps[k+1] / gaps[k] within a stage (NaN across stage boundaries or when gaps[k] = 0).
  std::vector<double> contraction_ratios;
  std::vector<std::size_t> stage_of_iteration;
  bool converged = false;
  bool diverged = false;
  double tolerance = 0.0;
  /// Gap between the final flow and one more application of the map.
  double residual = 0.0;
  std::size_t iterations = 0;
  std::vector<std::size_t> gap_indices;
  std::optional<RegimeDecision> regime;
  std::vector<std::string> warnings;

  [[nodiscard]] const MeasureFlow& final_flow() const { return iterates.back(); }
};

namespace detail {

inline MeasureFlow zero_drift_flow(std::span<const double> xi, std::span<const FbmPath> W, const TimeGrid& grid,
                                   std::size_t dim) {
  std::vector<EmpiricalMeasure> ms;
  const std::size_t n = W.size();
  for (std::size_t it = 0; it < grid.n_points(); ++it) {
    std::vector<double> pts(n * dim);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < dim; ++c) pts[p * dim + c] = xi[p * dim + c] + W[p].at(c, it);
    ms.push_back(EmpiricalMeasure::uniform(dim, std::move(pts)));
  }
  return {grid, std::move(ms)};
}

}  // namespace detail

/// Fixed-point iteration mu^{k+1} = law of the SDE frozen at b^{mu^k}. With
/// common random numbers the same (xi, W) are reused in every application.
inline PicardReport picard_iterate(const DriftSpec& drift, const InitialLaw& mu0, const SolverConfig& cfg,
                                   const PicardOptions& opt = {}) {
  detail::require<ContractError>(opt.tol > 0.0, "picard_iterate: tol must be positive");
  detail::require<ContractError>(opt.horizon_stages >= 1 && opt.horizon_stages <= cfg.grid.n_steps(),
                                 "picard_iterate: bad horizon_stages");
  const std::size_t dim = drift.dim();
  PicardReport rep;
  rep.tolerance = opt.tol;
  if (opt.regime) {
    rep.regime = regime_gate(*opt.regime);
    if (!rep.regime->admissible) {
      rep.warnings.push_back("regime gate: " + rep.regime->reason);
      log_warning("picard_iterate: parameters outside the admissible regime (" + rep.regime->reason + ")");
    }
  }
  detail::require_mollification(drift_is_rough(drift), cfg);

  std::uint64_t round = 0;
  auto xi = sample_initial(mu0, cfg, dim, 0);
  auto W = sample_noise(cfg, dim, 0);
  auto apply = [&](const MeasureFlow& flow) {
    if (!cfg.common_random_numbers) {
      ++round;
      xi = sample_initial(mu0, cfg, dim, round);
      W = sample_noise(cfg, dim, round);
    }
    const auto fields = drift_field_flow(drift, flow);
    return law_flow(solve_frozen_sde(fields, xi, W, cfg));
  };

  MeasureFlow current = opt.initial_flow ? *opt.initial_flow : detail::zero_drift_flow(xi, W, cfg.grid, dim);
  detail::require<ContractError>(current.grid == cfg.grid && current.dim() == dim,
                                 "picard_iterate: initial flow does not match the solver grid");
  const auto all_idx = thinned_indices(cfg.grid, opt.thinning ? opt.thinning : default_thinning(cfg.grid));
  rep.gap_indices = all_idx;
  if (opt.keep_iterates) rep.iterates.push_back(current);

  for (std::size_t stage = 1; stage <= opt.horizon_stages; ++stage) {
    const std::size_t end = cfg.grid.n_steps() * stage / opt.horizon_stages;
    std::vector<std::size_t> idx;
    for (auto i : all_idx)
      if (i <= end) idx.push_back(i);
    if (idx.back() != end) idx.push_back(end);
    const bool last_stage = stage == opt.horizon_stages;
    std::size_t increases = 0;
    bool stage_done = false;
    for (std::size_t k = 0; k < opt.max_iter; ++k) {
      MeasureFlow next = apply(current);
      const double gap = flow_gap(next, current, opt.p, idx);
      const bool same_stage = !rep.stage_of_iteration.empty() && rep.stage_of_iteration.back() == stage;
      if (same_stage) {
        const double prev = rep.gaps.back();
        rep.contraction_ratios.push_back(prev > 0.0 ? gap / prev : std::numeric_limits<double>::quiet_NaN());
        increases = gap > prev ? increases + 1 : 0;
      } else if (!rep.gaps.empty()) {
        rep.contraction_ratios.push_back(std::numeric_limits<double>::quiet_NaN());
      }
      rep.gaps.push_back(gap);
      rep.stage_of_iteration.push_back(stage);
      ++rep.iterations;
      current = std::move(next);
      if (opt.keep_iterates) rep.iterates.push_back(current);
      if (gap < opt.tol) {
        stage_done = true;
        break;
      }
      if (increases >= 5) {
        rep.diverged = true;
        rep.warnings.push_back("gap grew over 5 consecutive iterations");
        break;
      }
    }
    if (rep.diverged || (!stage_done && !last_stage)) break;
    if (last_stage) rep.converged = stage_done;
  }
  if (!opt.keep_iterates) rep.iterates.push_back(current);

  const MeasureFlow again = apply(current);
  rep.residual = flow_gap(again, current, opt.p, all_idx);
  return rep;
}

/// Interacting particle system: the drift at each step is rebuilt from the
/// empirical law of the current particle positions. Explicit (xi, W) inputs.
inline Ensemble particle_system(const DriftSpec& drift, std::span<const double> xi, std::span<const FbmPath> W,
                                const SolverConfig& cfg, std::string law_tag = {}) {
  const std::size_t n = cfg.n_particles, dim = drift.dim(), steps = cfg.grid.n_steps();
  detail::require<ContractError>(n >= 1, "particle_system: n_particles must be >= 1");
  detail::require<ContractError>(xi.size() == n * dim, "particle_system: need one initial point per particle");
  detail::require<ContractError>(W.size() == n, "particle_system: need one noise path per particle");
  for (const auto& w : W)
    detail::require<ContractError>(w.dim == dim && w.grid == cfg.grid, "particle_system: noise path does not match grid");
  detail::require_mollification(drift_is_rough(drift), cfg);
  detail::check_step_coupling(cfg);
  Ensemble e{cfg.grid, dim, n, std::vector<double>(n * cfg.grid.n_points() * dim), std::move(law_tag), cfg.seed};
  const std::size_t np = cfg.grid.n_points();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < dim; ++c) e.trajectories[(p * np) * dim + c] = xi[p * dim + c];
  const double dt = cfg.grid.dt();
  std::vector<double> D(n * dim, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    SpectralField b = effective_field(drift, EmpiricalMeasure::uniform(dim, e.snapshot(i)), cfg.grid.time(i));
    if (cfg.mollify_level) b = mollify(b, *cfg.mollify_level);
    parallel_for(n, [&](std::size_t p) {
      FieldEvaluator ev(b);
      const auto x = e.state(p, i);
      const auto v = ev(x);
      for (std::size_t c = 0; c < dim; ++c) {
        D[p * dim + c] += v[c] * dt;
        e.trajectories[(p * np + i + 1) * dim + c] = xi[p * dim + c] + D[p * dim + c] + W[p].at(c, i + 1);
      }
    });
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < dim; ++c)
        if (!std::isfinite(e.at(p, i + 1, c)))
          throw NumericalError("particle_system: non-finite state at step " + std::to_string(i + 1));
  }
  return e;
}

/// Same with i.i.d. (xi^i, W^i) drawn from the config seed.
inline Ensemble particle_system(const DriftSpec& drift, const InitialLaw& mu0, const SolverConfig& cfg) {
  const auto xi = sample_initial(mu0, cfg, drift.dim());
  const auto W = sample_noise(cfg, drift.dim());
  return particle_system(drift, xi, W, cfg, mu0.tag());
}

}  // namespace ddsde
