#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ddsde/young.hpp"

using namespace ddsde;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  std::vector<std::pair<double, double>> p;
  for (std::size_t i = 0; i < xs.size(); ++i) p.emplace_back(std::exp(xs[i]), std::exp(ys[i]));
  return estimate_holder_exponent(p).gamma_hat;
}

FbmPath subsample(const FbmPath& w, std::size_t factor) {
  const std::size_t n = w.grid.n_steps() / factor;
  FbmPath out{w.hurst, TimeGrid(w.grid.horizon(), n), w.dim, std::vector<double>(w.dim * (n + 1))};
  for (std::size_t c = 0; c < w.dim; ++c)
    for (std::size_t i = 0; i <= n; ++i) out.component(c)[i] = w.at(c, i * factor);
  return out;
}

}  // namespace

TEST(AveragedField, ConstantFieldIntegratesToLinearTime) {
  const std::vector<double> c{1.75};
  const auto b = constant_field(1, kTwoPi, c);
  const auto W = sample_fbm_circulant(TimeGrid(2.0, 256), 0.3, 1, RngStream(1));
  const auto A = averaged_field(b, W, periodic_x_grid(kTwoPi, 8));
  for (std::size_t it = 0; it <= 256; ++it)
    for (std::size_t j = 0; j < A.n_x(); ++j) EXPECT_NEAR(A.at(it, j), 1.75 * W.grid.time(it), 1e-13);
}

TEST(AveragedField, StartsAtZero) {
  const auto b = synth_besov_field(-0.5, 5, 1, RngStream(2));
  const auto A = averaged_field(b, sample_fbm_circulant(TimeGrid(1.0, 64), 0.3, 1, RngStream(3)), periodic_x_grid(kTwoPi, 16));
  for (std::size_t j = 0; j < A.n_x(); ++j) EXPECT_EQ(A.at(0, j), 0.0);
}

TEST(AveragedField, SingleModeBoundedByTime) {
  FieldBuilder fb(1, kTwoPi, 1);
  fb.add(Wavevector{5}, complex(0.5, 0.0));  // cos(5x)
  const auto W = sample_fbm_circulant(TimeGrid(1.0, 512), 0.4, 1, RngStream(4));
  const auto A = averaged_field(fb.build(), W, periodic_x_grid(kTwoPi, 32));
  for (std::size_t it = 0; it <= 512; ++it)
    for (std::size_t j = 0; j < A.n_x(); ++j) EXPECT_LE(std::abs(A.at(it, j)), W.grid.time(it) + 1e-12);
}

TEST(AveragedField, MatchesDirectQuadrature) {
  const auto b = synth_besov_field(0.0, 3, 1, RngStream(5));
  const auto W = sample_fbm_cholesky(TimeGrid(1.0, 128), 0.6, 1, RngStream(6));
  const std::vector<double> xs{0.3, 2.0};
  const auto A = averaged_field(b, W, xs);
  for (std::size_t j = 0; j < 2; ++j) {
    double acc = 0.0;
    for (std::size_t it = 1; it <= 128; ++it) {
      acc += 0.5 * W.grid.dt() * (evaluate_scalar(b, xs[j] + W.at(0, it - 1)) + evaluate_scalar(b, xs[j] + W.at(0, it)));
      EXPECT_NEAR(A.at(it, j), acc, 1e-12);
    }
  }
}

TEST(AveragedField, TwoDimensionalVectorField) {
  const auto b = synth_besov_field(0.2, 2, 2, RngStream(7), {.output_dim = 2});
  const auto W = sample_fbm_circulant(TimeGrid(1.0, 32), 0.5, 2, RngStream(8));
  const std::vector<double> xs{0.1, 0.2, 1.0, 3.0};
  const auto A = averaged_field(b, W, xs);
  std::vector<double> acc(2, 0.0);
  for (std::size_t it = 1; it <= 32; ++it) {
    const std::vector<double> y0{0.1 + W.at(0, it - 1), 0.2 + W.at(1, it - 1)}, y1{0.1 + W.at(0, it), 0.2 + W.at(1, it)};
    const auto f0 = evaluate(b, y0), f1 = evaluate(b, y1);
    for (int o = 0; o < 2; ++o) {
      acc[o] += 0.5 * W.grid.dt() * (f0[o] + f1[o]);
      EXPECT_NEAR(A.at(it, 0, o), acc[o], 1e-12);
    }
  }
}

TEST(AveragedField, LinearInField) {
  const auto b1 = synth_besov_field(-0.3, 4, 1, RngStream(9));
  const auto b2 = synth_besov_field(0.4, 4, 1, RngStream(10));
  const auto W = sample_fbm_circulant(TimeGrid(1.0, 256), 0.3, 1, RngStream(11));
  const auto xs = periodic_x_grid(kTwoPi, 16);
  const auto lhs = averaged_field(scaled(b1, 2.5) + b2, W, xs);
  const auto a1 = averaged_field(b1, W, xs), a2 = averaged_field(b2, W, xs);
  for (std::size_t i = 0; i < lhs.values.size(); ++i) EXPECT_NEAR(lhs.values[i], 2.5 * a1.values[i] + a2.values[i], 1e-12);
}

TEST(AveragedField, DyadicRefinementOrderAtLeastOne) {
  const auto b = synth_besov_field(1.0, 2, 1, RngStream(12));
  const auto fine = sample_fbm_cholesky(TimeGrid(1.0, 4096), 0.75, 1, RngStream(13));
  const auto xs = periodic_x_grid(kTwoPi, 8);
  std::vector<AveragedField> levels;
  for (std::size_t f : {128, 64, 32, 16, 8, 4}) levels.push_back(averaged_field(b, subsample(fine, f), xs));
  std::vector<double> lx, ly;
  for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
    const auto& coarse = levels[l];
    const auto& next = levels[l + 1];
    double e = 0;
    for (std::size_t it = 0; it <= coarse.t_grid.n_steps(); ++it)
      for (std::size_t j = 0; j < coarse.n_x(); ++j) e = std::max(e, std::abs(coarse.at(it, j) - next.at(2 * it, j)));
    lx.push_back(std::log(coarse.t_grid.dt()));
    ly.push_back(std::log(e));
  }
  EXPECT_GE(slope(lx, ly), 1.0);
}

TEST(AveragedField, MollificationTailSeminormDecreases) {
  // C^{1/2}_T L^2_x seminorm of T^W(b - mollify(b, N)). The x grid covers one
  // period with more than 2 k_max points, so the L^2_x norm splits over modes
  // (discrete Parseval) and the seminorm is monotone in N.
  const double alpha = -0.3;
  const auto b = synth_besov_field(alpha, 10, 1, RngStream(14));
  const std::size_t nt = 256, M = 2049;
  const auto W = sample_fbm_circulant(TimeGrid(1.0, nt), 0.3, 1, RngStream(15));
  std::vector<double> xs(M);
  for (std::size_t j = 0; j < M; ++j) xs[j] = kTwoPi * static_cast<double>(j) / M;
  double prev = 1e300;
  for (int N = 4; N <= 10; ++N) {
    const auto A = averaged_field(b - mollify(b, N), W, xs);
    double semi = 0;
    for (std::size_t s = 0; s <= nt; s += 4)
      for (std::size_t t = s + 4; t <= nt; t += 4) {
        double l2 = 0;
        for (std::size_t j = 0; j < M; ++j) l2 += (A.at(t, j) - A.at(s, j)) * (A.at(t, j) - A.at(s, j));
        semi = std::max(semi, std::sqrt(l2 / M) / std::sqrt(W.grid.time(t) - W.grid.time(s)));
      }
    EXPECT_LT(semi, prev) << "N=" << N;
    prev = semi;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(AveragedField, SpatialGradientStabilizesUnlikeField) {
  const double alpha = -0.25, H = 0.3;
  const auto b = synth_besov_field(alpha, 5, 1, RngStream(16));
  const auto W = sample_fbm_circulant(TimeGrid(1.0, 16384), H, 1, RngStream(17));
  const auto xs = periodic_x_grid(kTwoPi, 32);
  auto grad_avg = [&](int N) {
    const auto A = averaged_field(gradient(mollify(b, N)), W, xs);
    double m = 0;
    for (std::size_t j = 0; j < A.n_x(); ++j) m = std::max(m, std::abs(A.at(16384, j)));
    return m;
  };
  const double field_growth = gradient_sup_norm(mollify(b, 5)) / gradient_sup_norm(mollify(b, 3));
  const double avg_growth = grad_avg(5) / grad_avg(3);
  EXPECT_GT(field_growth, std::exp2(2.0 * (1.0 - alpha)) / 2.0);
  EXPECT_LT(avg_growth, 0.5 * field_growth);
}

TEST(NonlinearYoung, TimeLinearIntegrandReducesToRiemannIntegral) {
  const TimeGrid grid(1.0, 64);
  const auto A = AveragedField::tabulate(grid, {-2.0, -1.0, 0.0, 1.0, 2.0, 3.0}, 1, 1,
                                         [](double t, auto x, auto out) { out[0] = t * x[0]; });
  const std::vector<double> theta(65, 0.7);
  for (unsigned level : {0u, 3u, 6u}) EXPECT_NEAR(nonlinear_young_integral(A, theta, level).back(), 0.7, 1e-14);
}

TEST(NonlinearYoung, SpaceIndependentIntegrandTelescopes) {
  const TimeGrid grid(1.0, 32);
  auto f = [](double t) { return std::sin(3.0 * t) + t * t; };
  const auto A = AveragedField::tabulate(grid, {-1.0, 0.0, 1.0, 2.0}, 1, 1,
                                         [&](double t, auto, auto out) { out[0] = f(t); });
  std::vector<double> theta(33);
  RngStream rng(18);
  for (auto& v : theta) v = rng.uniform(-0.9, 1.9);
  const auto I = nonlinear_young_integral(A, theta, 2);
  for (std::size_t i = 0; i <= 32; ++i) EXPECT_NEAR(I[i], f(grid.time(i)) - f(0.0), 1e-14);
}

TEST(NonlinearYoung, AdditiveOverSubintervals) {
  const TimeGrid grid(1.0, 256);
  const auto g = sample_fbm_cholesky(grid, 0.75, 2, RngStream(19));
  std::vector<double> xs;
  for (int j = -40; j <= 40; ++j) xs.push_back(0.1 * j);
  const auto A = AveragedField::tabulate(grid, xs, 1, 1, [&](double t, auto x, auto out) {
    const auto i = static_cast<std::size_t>(std::lround(t * 256));
    out[0] = g.at(0, i) * x[0] * x[0] + std::sin(x[0]) * g.at(1, i);
  });
  const auto th = sample_fbm_cholesky(grid, 0.75, 1, RngStream(20));
  const auto theta = th.component(0);
  const auto whole = nonlinear_young_integral(A, theta, 4, 0, 256);
  const auto left = nonlinear_young_integral(A, theta, 3, 0, 128);
  const auto right = nonlinear_young_integral(A, theta, 3, 128, 256);
  for (std::size_t i = 0; i <= 128; ++i) {
    EXPECT_EQ(whole[i], left[i]);
    EXPECT_NEAR(whole[128 + i], left[128] + right[i], 1e-14);
  }
}

TEST(NonlinearYoung, ExtrapolationIsRejected) {
  const TimeGrid grid(1.0, 4);
  const auto A = AveragedField::tabulate(grid, {0.0, 1.0, 2.0, 3.0}, 1, 1, [](double t, auto x, auto out) { out[0] = t * x[0]; });
  std::vector<double> theta(5, 3.5);
  EXPECT_THROW(nonlinear_young_integral(A, theta, 1), DomainError);
  std::vector<double> ok(5, 1.5);
  EXPECT_THROW(nonlinear_young_integral(A, ok, 3), ContractError);
}

TEST(NonlinearYoung, CubicInterpolationMatchesOffGridEvaluation) {
  const auto b = synth_besov_field(0.5, 3, 1, RngStream(21));
  const auto W = sample_fbm_circulant(TimeGrid(1.0, 64), 0.5, 1, RngStream(22));
  const auto xs = periodic_x_grid(kTwoPi, 256);
  const auto A = averaged_field(b, W, xs);
  std::vector<double> theta(65, 1.2345);
  const auto I = nonlinear_young_integral(A, theta, 0);
  const std::vector<double> x{1.2345};
  const auto direct = averaged_field(b, W, x);
  EXPECT_NEAR(I.back(), direct.at(64, 0), 1e-6);
}

TEST(NonlinearYoung, RefinementRateAtLeastTwoGammaMinusOne) {
  const std::size_t n = 4096;
  const TimeGrid grid(1.0, n);
  std::vector<double> xs;
  for (int j = -60; j <= 60; ++j) xs.push_back(0.1 * j);
  const unsigned top = 10;
  std::vector<double> msq(top, 0.0);
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    const auto g = sample_fbm_circulant(grid, 0.75, 3, RngStream(rep).split(1));
    const auto A = AveragedField::tabulate(grid, xs, 1, 1, [&](double t, auto x, auto out) {
      const auto i = static_cast<std::size_t>(std::lround(t * n));
      out[0] = g.at(0, i) * x[0] * x[0] + g.at(1, i) * x[0];
    });
    const auto theta = g.component(2);
    std::vector<double> vals;
    for (unsigned l = 2; l <= top + 2; ++l) vals.push_back(nonlinear_young_integral(A, theta, l).back());
    for (unsigned l = 0; l < top; ++l) msq[l] += (vals[l] - vals[l + 1]) * (vals[l] - vals[l + 1]);
  }
  std::vector<std::pair<double, double>> pts;
  for (unsigned l = 0; l < top; ++l) pts.emplace_back(std::exp2(-static_cast<double>(l + 2)), std::sqrt(msq[l]));
  EXPECT_GE(estimate_holder_exponent(pts).gamma_hat, 2 * 0.75 - 1);
}

TEST(HolderExponent, ExactPowerLaw) {
  std::vector<std::pair<double, double>> p;
  for (int k = 0; k < 8; ++k) p.emplace_back(std::exp2(-k), std::exp2(-0.6 * k));
  const auto fit = estimate_holder_exponent(p);
  EXPECT_NEAR(fit.gamma_hat, 0.6, 1e-12);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
}

TEST(HolderExponent, RejectsBadInput) {
  std::vector<std::pair<double, double>> p{{1, 1}, {0.5, 0.5}, {0.25, 0.0}, {0.125, 1}};
  EXPECT_THROW(estimate_holder_exponent(p), DomainError);
  p.pop_back();
  EXPECT_THROW(estimate_holder_exponent(p), ContractError);
}

TEST(HolderExponent, TrimsFinestScalesOnlyOnPoorFit) {
  std::vector<std::pair<double, double>> p;
  for (int k = 0; k < 8; ++k) p.emplace_back(std::exp2(-k), std::exp2(-0.5 * k));
  EXPECT_FALSE(fit_holder_exponent(p).trimmed);
  p[7].second = 10.0;
  p[6].second = 10.0;
  const auto fit = fit_holder_exponent(p);
  EXPECT_TRUE(fit.trimmed);
  EXPECT_NEAR(fit.gamma_hat, 0.5, 1e-12);
}

TEST(HolderExponent, FbmPathsRecoverHurst) {
  const TimeGrid grid(1.0, 4096);
  const auto lags = dyadic_lags(1024);
  for (double H : {0.3, 0.7}) {
    const CirculantFbmSampler s(grid, H);
    std::vector<double> msq(lags.size(), 0.0);
    for (std::uint64_t p = 0; p < 100; ++p) {
      const auto m = mean_square_increments(s.sample(1, RngStream(30).split(p)).component(0), lags);
      for (std::size_t i = 0; i < lags.size(); ++i) msq[i] += m[i] / 100.0;
    }
    const auto fit = fit_holder_exponent(rms_moduli(msq, lags, grid.dt()));
    EXPECT_NEAR(fit.gamma_hat, H, 0.07) << "H=" << H;
  }
}
