#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "ddsde/solver.hpp"

using namespace ddsde;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

SolverConfig config(std::size_t n, std::size_t steps, double H = 0.5, std::uint64_t seed = 7) {
  SolverConfig c;
  c.grid = TimeGrid(1.0, steps);
  c.n_particles = n;
  c.hurst = H;
  c.seed = seed;
  return c;
}

// b(x) = a sin(x) on the circle of length 2 pi.
SpectralField sine_field(double a) {
  return FieldBuilder(1, kTwoPi, 1).add({1}, std::complex<double>(0.0, -a / 2.0)).build();
}

FbmPath subsample(const FbmPath& fine, std::size_t steps) {
  const std::size_t stride = fine.grid.n_steps() / steps;
  FbmPath out{fine.hurst, TimeGrid(fine.grid.horizon(), steps), fine.dim, {}};
  for (std::size_t c = 0; c < fine.dim; ++c)
    for (std::size_t i = 0; i <= steps; ++i) out.values.push_back(fine.at(c, i * stride));
  return out;
}

PicardOptions tolerance(double tol) {
  PicardOptions o;
  o.tol = tol;
  return o;
}

double flow_mean(const MeasureFlow& f, std::size_t it) { return f.at(it).mean()[0]; }

}  // namespace

TEST(InitialLaw, DrawsAreReproducibleAndShaped) {
  const auto law = InitialLaw::gaussian({1.0, -2.0}, 0.5);
  const auto a = law.sample(100, 2, RngStream(3));
  EXPECT_EQ(a, law.sample(100, 2, RngStream(3)));
  EXPECT_EQ(a.size(), 200u);
  const auto d = InitialLaw::dirac({4.0}).sample(5, 1, RngStream(1));
  for (double x : d) EXPECT_EQ(x, 4.0);
  const auto u = InitialLaw::uniform({-1.0}, {2.0}).sample(500, 1, RngStream(2));
  for (double x : u) {
    EXPECT_GE(x, -1.0);
    EXPECT_LT(x, 2.0);
  }
  EXPECT_THROW((void)InitialLaw::gaussian({1.0}, 1.0).sample(3, 2, RngStream(1)), ContractError);
}

TEST(FrozenSde, ZeroFieldReturnsInitialPlusNoise) {
  const auto cfg = config(20, 64, 0.3);
  const auto xi = sample_initial(InitialLaw::gaussian({}, 1.0), cfg, 1);
  const auto W = sample_noise(cfg, 1);
  const auto e = solve_frozen_sde(zero_field(1, kTwoPi, 1), xi, W, cfg);
  for (std::size_t p = 0; p < 20; ++p)
    for (std::size_t it = 0; it <= 64; ++it) EXPECT_EQ(e.at(p, it), xi[p] + W[p].at(0, it));
}

TEST(FrozenSde, ConstantFieldAddsLinearTrend) {
  const auto cfg = config(10, 50, 0.7);
  const std::vector<double> c{0.4, -1.3};
  const auto xi = sample_initial(InitialLaw::uniform({0, 0}, {1, 1}), cfg, 2);
  const auto W = sample_noise(cfg, 2);
  const auto e = solve_frozen_sde(constant_field(2, kTwoPi, c), xi, W, cfg);
  for (std::size_t p = 0; p < 10; ++p)
    for (std::size_t it = 0; it <= 50; ++it)
      for (std::size_t k = 0; k < 2; ++k)
        EXPECT_NEAR(e.at(p, it, k), xi[2 * p + k] + c[k] * cfg.grid.time(it) + W[p].at(k, it), 1e-12);
}

TEST(FrozenSde, EulerConvergesAtFirstOrderForSmoothDrift) {
  // Reference on 2048 steps; the coarse solves reuse the same path, subsampled.
  auto fine_cfg = config(16, 2048, 0.75);
  const auto xi = sample_initial(InitialLaw::gaussian({}, 1.0), fine_cfg, 1);
  const auto W = sample_noise(fine_cfg, 1);
  const auto b = sine_field(1.5);
  const auto ref = solve_frozen_sde(b, xi, W, fine_cfg);
  std::vector<double> err;
  for (std::size_t steps : {32u, 64u, 128u}) {
    auto cfg = fine_cfg;
    cfg.grid = TimeGrid(1.0, steps);
    std::vector<FbmPath> Wc;
    for (const auto& w : W) Wc.push_back(subsample(w, steps));
    const auto e = solve_frozen_sde(b, xi, Wc, cfg);
    double worst = 0;
    for (std::size_t p = 0; p < 16; ++p) worst = std::max(worst, std::abs(e.at(p, steps) - ref.at(p, 2048)));
    err.push_back(worst);
  }
  EXPECT_GT(std::log2(err[0] / err[2]) / 2.0, 0.8);
}

TEST(FrozenSde, LinearDriftMatchesExponentialDecay) {
  // b(x) = -(L / 2 pi) sin(2 pi x / L) ~ -x near the origin; W = 0, xi = 1.
  const double L = 1000.0;
  const auto b = FieldBuilder(1, L, 1).add({1}, std::complex<double>(0.0, L / (4.0 * std::numbers::pi))).build();
  EXPECT_NEAR(evaluate_scalar(b, 0.5), -0.5, 1e-5);
  std::vector<double> err;
  for (std::size_t steps : {32u, 64u, 128u, 256u}) {
    auto cfg = config(1, steps);
    std::vector<FbmPath> W{FbmPath{0.5, cfg.grid, 1, std::vector<double>(steps + 1, 0.0)}};
    const std::vector<double> xi{1.0};
    err.push_back(std::abs(solve_frozen_sde(b, xi, W, cfg).at(0, steps) - std::exp(-1.0)));
    EXPECT_LE(err.back(), cfg.grid.dt() + 1e-4);
  }
  for (std::size_t k = 0; k + 1 < err.size(); ++k) EXPECT_NEAR(std::log2(err[k] / err[k + 1]), 1.0, 0.1);
}

TEST(FrozenSde, RoughFieldWithoutMollificationIsConfigError) {
  const auto rough = synth_besov_field(-0.3, 8, 1, RngStream(4));
  EXPECT_TRUE(is_rough(rough));
  EXPECT_FALSE(is_rough(synth_besov_field(1.5, 8, 1, RngStream(4))));
  auto cfg = config(4, 32);
  const auto xi = sample_initial(InitialLaw::dirac({0.0}), cfg, 1);
  const auto W = sample_noise(cfg, 1);
  EXPECT_THROW((void)solve_frozen_sde(rough, xi, W, cfg), ConfigError);
  cfg.mollify_level = 3;
  EXPECT_NO_THROW((void)solve_frozen_sde(rough, xi, W, cfg));
}

TEST(FrozenSde, OverflowIsNumericalError) {
  auto cfg = config(3, 4);
  cfg.grid = TimeGrid(64.0, 4);
  const std::vector<double> c{1e308};
  const auto xi = sample_initial(InitialLaw::dirac({0.0}), cfg, 1);
  const auto W = sample_noise(cfg, 1);
  try {
    (void)solve_frozen_sde(constant_field(1, kTwoPi, c), xi, W, cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(FrozenSde, MismatchedInputsAreContractErrors) {
  const auto cfg = config(4, 16);
  const auto W = sample_noise(cfg, 1);
  const std::vector<double> xi(3, 0.0);
  EXPECT_THROW((void)solve_frozen_sde(zero_field(1, kTwoPi, 1), xi, W, cfg), ContractError);
}

TEST(Noise, CommonRandomNumbersAreDeterministic) {
  auto cfg = config(8, 32, 0.4, 11);
  const auto a = sample_noise(cfg, 2), b = sample_noise(cfg, 2);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a[i].values, b[i].values);
  cfg.seed = 12;
  EXPECT_NE(sample_noise(cfg, 2)[0].values, a[0].values);
  EXPECT_NE(a[0].values, a[1].values);
}

TEST(Thinning, IncludesEndpoints) {
  const TimeGrid g(1.0, 100);
  EXPECT_EQ(default_thinning(g), 4u);
  const auto idx = thinned_indices(g, 4);
  EXPECT_EQ(idx.front(), 0u);
  EXPECT_EQ(idx.back(), 100u);
  EXPECT_EQ(thinned_indices(TimeGrid(1.0, 10), 3), (std::vector<std::size_t>{0, 3, 6, 9, 10}));
}

TEST(Picard, ZeroDriftConvergesImmediately) {
  const auto cfg = config(64, 32, 0.3);
  const auto rep = picard_iterate(DriftSpec::zero(1, kTwoPi), InitialLaw::gaussian({}, 1.0), cfg, tolerance(1e-10));
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 1u);
  EXPECT_EQ(rep.gaps.front(), 0.0);
  EXPECT_EQ(rep.residual, 0.0);
}

TEST(Picard, ConstantExternalFieldTranslatesFlow) {
  const auto cfg = config(128, 40, 0.6);
  const std::vector<double> c{0.8};
  const auto drift = DriftSpec::convolutional(zero_field(1, kTwoPi, 1), constant_field(1, kTwoPi, c));
  const auto rep = picard_iterate(drift, InitialLaw::gaussian({}, 1.0), cfg, tolerance(1e-10));
  ASSERT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 2u);
  EXPECT_NEAR(rep.gaps.front(), 0.8, 1e-12);
  const auto zero = picard_iterate(DriftSpec::zero(1, kTwoPi), InitialLaw::gaussian({}, 1.0), cfg, tolerance(1e-10));
  for (std::size_t it = 0; it <= 40; it += 8)
    EXPECT_NEAR(flow_mean(rep.final_flow(), it), flow_mean(zero.final_flow(), it) + 0.8 * cfg.grid.time(it), 1e-12);
}

TEST(Picard, ContractsForSmoothInteraction) {
  const auto cfg = config(200, 64, 0.5);
  const auto drift = DriftSpec::convolutional(sine_field(0.8));
  const auto rep = picard_iterate(drift, InitialLaw::gaussian({}, 1.0), cfg, [] {
    auto o = tolerance(1e-10);
    o.max_iter = 40;
    return o;
  }());
  ASSERT_TRUE(rep.converged);
  EXPECT_FALSE(rep.diverged);
  EXPECT_LE(rep.residual, 2e-10);
  for (double r : rep.contraction_ratios) {
    if (std::isfinite(r)) {
      EXPECT_LT(r, 1.0);
    }
  }
}

TEST(Picard, LipschitzKernelContractsGeometrically) {
  auto cfg = config(400, 64, 0.3);
  cfg.grid = TimeGrid(0.5, 64);
  const auto kernel = synth_besov_field(1.0, 3, 1, RngStream(21));
  EXPECT_NEAR(besov_norm(kernel, 1.0), 1.0, 1e-12);
  const auto rep = picard_iterate(DriftSpec::convolutional(kernel), InitialLaw::gaussian({}, 1.0), cfg, tolerance(1e-10));
  ASSERT_TRUE(rep.converged);
  ASSERT_GE(rep.contraction_ratios.size(), 3u);
  // Late ratios sit near the roundoff floor of the gap; use those before it.
  std::vector<double> r;
  for (std::size_t k = 0; k < rep.contraction_ratios.size(); ++k)
    if (rep.gaps[k + 1] > 1e3 * 1e-16) r.push_back(rep.contraction_ratios[k]);
  for (double x : r) EXPECT_LT(x, 1.0);
  for (std::size_t k = 1; k < r.size(); ++k) EXPECT_NEAR(r[k], r[0], 0.15);
}

TEST(Picard, NestedHorizonsReachSameFixedPoint) {
  const auto cfg = config(100, 64, 0.5);
  const auto drift = DriftSpec::convolutional(sine_field(0.8));
  const auto one = picard_iterate(drift, InitialLaw::gaussian({}, 1.0), cfg, tolerance(1e-11));
  auto staged = tolerance(1e-11);
  staged.horizon_stages = 4;
  const auto four = picard_iterate(drift, InitialLaw::gaussian({}, 1.0), cfg, staged);
  ASSERT_TRUE(one.converged && four.converged);
  EXPECT_EQ(four.stage_of_iteration.back(), 4u);
  for (std::size_t it = 0; it <= 64; it += 16)
    EXPECT_LE(wasserstein_1d(one.final_flow().at(it), four.final_flow().at(it), 1.0), 1e-9);
}

TEST(Picard, InadmissibleRegimeIsReportedNotFatal) {
  auto cfg = config(16, 16, 0.3);
  const auto drift = DriftSpec::convolutional(sine_field(0.5));
  auto opt = tolerance(1e-10);
  RegimeParams prm;
  prm.H = 0.3;
  prm.alpha = -2.0;
  opt.regime = prm;
  const auto rep = picard_iterate(drift, InitialLaw::gaussian({}, 1.0), cfg, opt);
  ASSERT_TRUE(rep.regime.has_value());
  EXPECT_FALSE(rep.regime->admissible);
  EXPECT_FALSE(rep.warnings.empty());
}

TEST(ParticleSystem, SingleParticleFeelsKernelAtOrigin) {
  const auto cfg = config(1, 30, 0.4);
  const auto K = sine_field(1.0) + constant_field(1, kTwoPi, std::vector<double>{0.25});
  const auto e = particle_system(DriftSpec::convolutional(K), InitialLaw::gaussian({}, 1.0), cfg);
  const auto xi = sample_initial(InitialLaw::gaussian({}, 1.0), cfg, 1);
  const auto W = sample_noise(cfg, 1);
  for (std::size_t it = 0; it <= 30; ++it)
    EXPECT_NEAR(e.at(0, it), xi[0] + 0.25 * cfg.grid.time(it) + W[0].at(0, it), 1e-12);
}

TEST(ParticleSystem, TranslationCovariantForPureInteraction) {
  const auto cfg = config(40, 32, 0.5);
  const auto drift = DriftSpec::convolutional(synth_besov_field(1.5, 4, 1, RngStream(9)));
  const auto a = particle_system(drift, InitialLaw::gaussian({0.0}, 1.0), cfg);
  const auto b = particle_system(drift, InitialLaw::gaussian({2.5}, 1.0), cfg);
  for (std::size_t p = 0; p < 40; ++p)
    for (std::size_t it = 0; it <= 32; ++it) EXPECT_NEAR(b.at(p, it) - a.at(p, it), 2.5, 1e-9);
}

TEST(ParticleSystem, ExchangeableUnderRelabelling) {
  const auto cfg = config(24, 20, 0.4);
  const auto drift = DriftSpec::convolutional(synth_besov_field(1.5, 3, 1, RngStream(5)));
  auto xi = sample_initial(InitialLaw::gaussian({}, 1.0), cfg, 1);
  auto W = sample_noise(cfg, 1);
  const auto a = particle_system(drift, xi, W, cfg);
  std::vector<std::size_t> perm(24);
  for (std::size_t i = 0; i < 24; ++i) perm[i] = (7 * i + 3) % 24;
  std::vector<double> xi2(24);
  std::vector<FbmPath> W2(24);
  for (std::size_t i = 0; i < 24; ++i) {
    xi2[i] = xi[perm[i]];
    W2[i] = W[perm[i]];
  }
  const auto b = particle_system(drift, xi2, W2, cfg);
  for (std::size_t i = 0; i < 24; ++i)
    for (std::size_t it = 0; it <= 20; ++it) EXPECT_NEAR(b.at(i, it), a.at(perm[i], it), 1e-12);
}

TEST(ParticleSystem, DeterministicGivenSeed) {
  auto cfg = config(30, 20, 0.35);
  const auto drift = DriftSpec::convolutional(sine_field(0.6));
  const auto a = particle_system(drift, InitialLaw::gaussian({}, 1.0), cfg);
  EXPECT_EQ(a.trajectories, particle_system(drift, InitialLaw::gaussian({}, 1.0), cfg).trajectories);
  cfg.seed = 8;
  EXPECT_NE(a.trajectories, particle_system(drift, InitialLaw::gaussian({}, 1.0), cfg).trajectories);
}

TEST(LawFlow, ZeroDriftSecondMomentAddsNoiseVariance) {
  const double H = 0.35, T = 2.0;
  auto cfg = config(20000, 32, H, 17);
  cfg.grid = TimeGrid(T, 32);
  const auto e = particle_system(DriftSpec::zero(2, kTwoPi), InitialLaw::gaussian({0.5, -1.0}, 0.7), cfg);
  const auto flow = law_flow(e);
  const double m0 = std::pow(moment_norm(flow.at(0), 2.0), 2.0);
  std::vector<double> sq(cfg.n_particles);
  for (std::size_t p = 0; p < cfg.n_particles; ++p) {
    const auto x = e.state(p, 32);
    sq[p] = x[0] * x[0] + x[1] * x[1];
  }
  double mean = 0, var = 0;
  for (double v : sq) mean += v / static_cast<double>(sq.size());
  for (double v : sq) var += (v - mean) * (v - mean) / static_cast<double>(sq.size() - 1);
  EXPECT_NEAR(std::pow(moment_norm(flow.at(32), 2.0), 2.0), mean, 1e-9);
  EXPECT_NEAR(mean, m0 + 2.0 * std::pow(T, 2.0 * H), 3.0 * std::sqrt(var / static_cast<double>(sq.size())));
}

TEST(LawFlow, SnapshotsMatchTrajectories) {
  const auto cfg = config(50, 10, 0.5);
  const auto e = particle_system(DriftSpec::zero(2, kTwoPi), InitialLaw::dirac({1.0, 2.0}), cfg);
  const auto flow = law_flow(e);
  ASSERT_EQ(flow.measures.size(), 11u);
  EXPECT_NEAR(flow.at(0).mean()[0], 1.0, 1e-14);
  EXPECT_NEAR(flow.at(0).mean()[1], 2.0, 1e-14);
  double m = 0;
  for (std::size_t p = 0; p < 50; ++p) m += e.at(p, 10, 1) / 50.0;
  EXPECT_NEAR(flow.at(10).mean()[1], m, 1e-12);
}
