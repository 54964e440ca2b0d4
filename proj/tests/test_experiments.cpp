#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "ddsde/cli.hpp"
#include "ddsde/experiments.hpp"
#include "ddsde/io.hpp"

using namespace ddsde;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ddsde_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ddsde");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const auto p = dir / "config.json";
  write_text_file(p, doc.dump(2));
  return p;
}

json small_picard() {
  return {{"experiment", "picard"},
          {"seed", 7},
          {"params", {{"H", 0.3}, {"alpha", 1.0}}},
          {"solver", {{"T", 0.5}, {"n_steps", 16}, {"n_particles", 64}}},
          {"drift", {{"type", "convolutional"}, {"kernel", {{"synth", {{"alpha", 1.0}, {"max_level", 2}}}}}}}};
}

}  // namespace

TEST(Io, MeasureCsvRoundTripIsExact) {
  RngStream rng(1);
  std::vector<double> pts(30), w(15);
  for (auto& x : pts) x = rng.normal() * 1e3;
  for (auto& x : w) x = rng.uniform();
  const auto mu = EmpiricalMeasure::normalized(2, pts, w);
  const auto back = measure_from_csv(measure_to_csv(mu));
  EXPECT_EQ(back.points(), mu.points());
  for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_NEAR(back.weight(i), mu.weight(i), 1e-16);
  EXPECT_EQ(measure_to_csv(mu).substr(0, 9), "w,x_1,x_2");
}

TEST(Io, MalformedMeasureCsvNamesTheLine) {
  try {
    (void)measure_from_csv("w,x_1\n0.5,1\n0.5,abc\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW((void)measure_from_csv("a,b\n1,2\n"), ConfigError);
}

TEST(Io, FlowManifestRoundTrip) {
  const auto dir = scratch("flow");
  SolverConfig cfg;
  cfg.grid = TimeGrid(1.0, 5);
  cfg.n_particles = 7;
  const auto e = particle_system(DriftSpec::zero(1, 6.0), InitialLaw::gaussian({}, 1.0), cfg);
  const auto flow = law_flow(e);
  write_flow(dir, flow);
  const auto back = read_flow(dir);
  EXPECT_EQ(back.grid, flow.grid);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(back.at(i).points(), flow.at(i).points());
}

TEST(Io, EnsembleCsvHasOneRowPerParticleAndTime) {
  SolverConfig cfg;
  cfg.grid = TimeGrid(1.0, 4);
  cfg.n_particles = 3;
  const auto e = particle_system(DriftSpec::zero(2, 6.0), InitialLaw::dirac({0.0, 1.0}), cfg);
  const auto csv = ensemble_to_csv(e);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "particle,t,x_1,x_2");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 5);
}

TEST(Io, PicardReportJsonUsesNullForUndefinedRatios) {
  PicardReport r;
  r.gaps = {0.5, 0.0, 0.0};
  r.contraction_ratios = {0.0, std::numeric_limits<double>::quiet_NaN()};
  const auto j = to_json(r);
  EXPECT_TRUE(j["contraction_ratios"][1].is_null());
  EXPECT_EQ(j["gaps"].size(), 3u);
}

TEST(Config, DefaultsAreWrittenBack) {
  auto cfg = parse_common({{"experiment", "particles"}});
  EXPECT_EQ(cfg.resolved["solver"]["n_particles"], 256);
  EXPECT_EQ(cfg.resolved["params"]["q"], "inf");
  EXPECT_EQ(cfg.resolved["drift"]["type"], "zero");
  EXPECT_TRUE(std::isinf(cfg.params.q));
  EXPECT_EQ(cfg.solver.hurst, 0.5);
}

TEST(Config, ErrorsNameTheField) {
  auto expect_msg = [](json doc, const std::string& needle) {
    try {
      (void)parse_common(std::move(doc));
      ADD_FAILURE() << "no error for " << needle;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_msg(json::object(), "experiment");
  expect_msg({{"experiment", "nonsense"}}, "unknown tag");
  expect_msg({{"experiment", "picard"}, {"solver", {{"n_particles", "many"}}}}, "solver.n_particles");
  expect_msg({{"experiment", "picard"}, {"solver", {{"n_partcles", 5}}}}, "solver.n_partcles: unknown field");
  expect_msg({{"experiment", "picard"}, {"params", {{"H", 1.5}}}}, "params.H");
  expect_msg({{"experiment", "picard"}, {"drift", {{"type", "convolutional"}, {"kernel", {{"synth", {{"max_level", 3}}}}}}}},
             "drift.kernel.synth.alpha");
  expect_msg({{"experiment", "picard"}, {"initial_law", {{"type", "gaussian"}, {"mean", {0.0, 1.0}}}}}, "initial_law.mean");
}

TEST(Config, ShiftedLawMovesEveryDraw) {
  const auto law = InitialLaw::uniform({0.0}, {1.0});
  const auto a = law.sample(10, 1, RngStream(3));
  const auto b = shifted(law, 0.25).sample(10, 1, RngStream(3));
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(b[i] - a[i], 0.25, 1e-15);
}

TEST(Experiments, FbmSelfTestZScoresAreModerate) {
  const auto stats = fbm_self_test(0.35, 256, 2000, 1.0, FbmSampler::Circulant, true, 3);
  EXPECT_EQ(stats.size(), 8u);
  for (const auto& s : stats) EXPECT_LE(std::abs(s.z_score), 4.0) << s.statistic;
}

TEST(Experiments, AvgfieldSweepOrderOnlyPermutesRows) {
  auto run = [](json points) {
    auto cfg = parse_common({{"experiment", "avgfield"},
                             {"avgfield", {{"points", points}, {"paths", 3}, {"n_steps", 512}, {"n_x", 4}, {"max_lag", 64}}}});
    return run_avgfield(cfg).summary["results"]["points"];
  };
  const json p1 = {{"alpha", 0.0}, {"H", 0.5}}, p2 = {{"alpha", -0.3}, {"H", 0.4}};
  const auto a = run(json::array({p1, p2})), b = run(json::array({p2, p1}));
  EXPECT_EQ(a[0], b[1]);
  EXPECT_EQ(a[1], b[0]);
}

TEST(Experiments, ShiftStabilityIsExact) {
  auto doc = small_picard();
  doc["experiment"] = "stability";
  doc["picard"] = {{"tol", 1e-13}, {"max_iter", 60}};
  doc["stability"] = {{"mode", "shift"}, {"shifts", {0.1, 0.5}}};
  auto cfg = parse_common(doc);
  const auto rep = run_stability(cfg);
  EXPECT_TRUE(rep.passed()) << rep.summary["checks"].dump();
  for (const auto& r : rep.summary["results"]["pairs"])
    EXPECT_NEAR(r["path_gap"].get<double>(), r["perturbation"].get<double>(), 1e-10);
}

TEST(Experiments, ChaosMarksRoughDriftsAsUnasserted) {
  json doc = {{"experiment", "chaos"},
              {"seed", 2},
              {"params", {{"H", 0.3}, {"alpha", -0.3}}},
              {"solver", {{"T", 0.25}, {"n_steps", 16}, {"mollify_level", 4}}},
              {"drift", {{"type", "convolutional"}, {"kernel", {{"synth", {{"alpha", -0.3}, {"max_level", 6}, {"scale", 0.1}}}}}}},
              {"chaos", {{"N", {8, 16, 32}}, {"replicas", 10}, {"reference_particles", 128}, {"times", {1.0}}}}};
  auto cfg = parse_common(doc);
  const auto rep = run_chaos(cfg);
  EXPECT_FALSE(rep.summary["results"]["theorem_asserted"].get<bool>());
  EXPECT_TRUE(rep.summary["checks"].empty());
}

TEST(Experiments, LawRegularityPointMassSpreads) {
  json doc = {{"experiment", "law_regularity"},
              {"seed", 4},
              {"solver", {{"T", 1.0}, {"n_steps", 16}, {"n_particles", 2000}}},
              {"initial_law", {{"type", "dirac"}, {"at", {0.0}}}},
              {"law_regularity", {{"times", {0.25, 0.5, 1.0}}}}};
  auto cfg = parse_common(doc);
  const auto rep = run_law_regularity(cfg);
  const auto& rows = rep.summary["results"]["times"];
  for (std::size_t i = 1; i < rows.size(); ++i)
    EXPECT_LT(rows[i]["norms"]["inf"].get<double>(), rows[i - 1]["norms"]["inf"].get<double>());
}

TEST(Experiments, KdeMatchesStandardNormal) {
  std::vector<double> x(20000);
  RngStream rng(5);
  for (auto& v : x) v = rng.normal();
  const auto [xs, f] = kde_1d(EmpiricalMeasure::uniform(1, x), 400);
  EXPECT_NEAR(lp_norm(xs, f, 1.0), 1.0, 1e-3);
  EXPECT_NEAR(lp_norm(xs, f, std::numeric_limits<double>::infinity()), 1.0 / std::sqrt(2 * std::numbers::pi), 0.02);
}

TEST(Cli, FbmTestExampleSucceeds) {
  const auto dir = scratch("cli_fbm");
  const auto r = cli({"fbm-test", "--H", "0.5", "--n", "256", "--paths", "2000", "--seed", "7", "-o", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_text_file(dir / "fbm_test.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "H,n_steps,statistic,empirical,theoretical,z_score");
  const auto summary = json::parse(read_text_file(dir / "summary.json"));
  EXPECT_EQ(summary["seed"], 7);
  EXPECT_EQ(summary["version"], DDSDE_VERSION);
  EXPECT_EQ(summary["config"]["fbm_test"]["paths"], 2000);
}

TEST(Cli, MalformedConfigExitsTwoWithLocation) {
  const auto dir = scratch("cli_bad");
  write_text_file(dir / "bad.json", "{\n  \"experiment\": \"picard\",\n  \"seed\": 7,,\n}\n");
  const auto r = cli({"run", "-c", (dir / "bad.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;

  auto doc = small_picard();
  doc["solver"]["n_steps"] = -4;
  const auto r2 = cli({"run", "-c", write_config(dir, doc).string(), "-o", (dir / "o").string()});
  EXPECT_EQ(r2.code, 2);
  EXPECT_NE(r2.err.find("solver.n_steps"), std::string::npos) << r2.err;
}

TEST(Cli, UnknownSubcommandAndTagMismatchExitTwo) {
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  const auto dir = scratch("cli_mismatch");
  EXPECT_EQ(cli({"chaos", "-c", write_config(dir, small_picard()).string()}).code, 2);
}

TEST(Cli, NumericalBlowUpExitsThree) {
  const auto dir = scratch("cli_blowup");
  json doc = {{"experiment", "particles"},
              {"solver", {{"T", 64.0}, {"n_steps", 4}, {"n_particles", 4}}},
              {"drift", {{"type", "convolutional"}, {"external", {{"constant", {1e308}}}}}}};
  const auto r = cli({"run", "-c", write_config(dir, doc).string(), "-o", (dir / "o").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, UnwritableOutputExitsTwo) {
  const auto dir = scratch("cli_unwritable");
  write_text_file(dir / "blocker", "x");
  const auto r = cli({"run", "-c", write_config(dir, small_picard()).string(), "-o", (dir / "blocker" / "sub").string()});
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, PicardTwiceIsByteIdentical) {
  const auto dir = scratch("cli_det");
  const auto c = write_config(dir, small_picard()).string();
  const auto out = (dir / "o").string();
  ASSERT_EQ(cli({"picard", "-c", c, "--seed", "7", "-o", out, "--export-ensemble"}).code, 0);
  const auto a = read_text_file(dir / "o" / "summary.json");
  const auto ea = read_text_file(dir / "o" / "ensemble.csv");
  ASSERT_EQ(cli({"picard", "-c", c, "--seed", "7", "-o", out, "--export-ensemble"}).code, 0);
  EXPECT_EQ(a, read_text_file(dir / "o" / "summary.json"));
  EXPECT_EQ(ea, read_text_file(dir / "o" / "ensemble.csv"));
  ASSERT_EQ(cli({"picard", "-c", c, "--seed", "8", "-o", out}).code, 0);
  EXPECT_NE(a, read_text_file(dir / "o" / "summary.json"));
}
