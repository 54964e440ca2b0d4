#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddsde/drift.hpp"
#include "ddsde/errors.hpp"
#include "ddsde/field.hpp"
#include "ddsde/field_io.hpp"
#include "ddsde/rng.hpp"
#include "ddsde/solver.hpp"

namespace ddsde {

/// View onto one object of a config document. Reads fill in defaults, so
/// after parsing the document is the fully resolved config. Errors name the
/// dotted path of the offending field.
class ConfigNode {
 public:
  ConfigNode(nlohmann::json& node, std::string path) : node_(&node), path_(std::move(path)) {
    if (node_->is_null()) *node_ = nlohmann::json::object();
    if (!node_->is_object()) throw ConfigError(where() + ": expected an object");
  }

  [[nodiscard]] std::string where(std::string_view key = {}) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  [[nodiscard]] bool has(const std::string& key) const { return node_->contains(key) && !(*node_)[key].is_null(); }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    if (!has(key)) (*node_)[key] = fallback;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError(where(key) + ": required field missing");
    return convert<T>(key);
  }

  /// Missing or null reads as nullopt (and is recorded as null).
  template <class T>
  std::optional<T> optional(const std::string& key) {
    if (!has(key)) {
      (*node_)[key] = nullptr;
      return std::nullopt;
    }
    return convert<T>(key);
  }

  /// Number, or null / "inf" for +infinity.
  double extended(const std::string& key, double fallback) {
    if (!node_->contains(key)) (*node_)[key] = std::isinf(fallback) ? nlohmann::json("inf") : nlohmann::json(fallback);
    const auto& v = (*node_)[key];
    if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) return std::numeric_limits<double>::infinity();
    return convert<double>(key);
  }

  ConfigNode child(const std::string& key) { return {(*node_)[key], where(key)}; }

  [[nodiscard]] nlohmann::json& raw() { return *node_; }
  [[nodiscard]] nlohmann::json& raw(const std::string& key) { return (*node_)[key]; }

  /// Rejects keys outside the allowed set, catching typos early.
  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& [k, v] : node_->items()) {
      bool ok = false;
      for (auto a : keys) ok = ok || k == a;
      if (!ok) throw ConfigError(where(k) + ": unknown field");
    }
  }

 private:
  template <class T>
  T convert(const std::string& key) {
    const auto& v = (*node_)[key];
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t> || std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
        if constexpr (!std::is_same_v<T, int>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
            throw ConfigError(where(key) + ": expected a nonnegative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
      }
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  nlohmann::json* node_;
  std::string path_;
};

/// Deterministic sub-seed from the run seed and a label path.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) {
  return RngStream(seed).split(labels).next_u64();
}

/// Stable label for a real parameter value, so keyed streams do not depend
/// on sweep order.
inline std::uint64_t value_label(double v) {
  std::uint64_t bits;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, sizeof v);
  return bits;
}

/// Field given as a serialized document ({d, L, blocks}), a synthetic
/// spec ({"synth": {alpha, max_level, scale, jitter, seed}}), a constant
/// ({"constant": [..]}) or null / {"zero": true}.
inline SpectralField parse_field(nlohmann::json& doc, const std::string& path, std::size_t dim, double period,
                                 const RngStream& rng) {
  if (doc.is_null()) doc = {{"zero", true}};
  ConfigNode node(doc, path);
  if (node.has("blocks")) {
    SpectralField f = field_from_json(doc);
    if (f.dim() != dim || f.period() != period || f.output_dim() != dim)
      throw ConfigError(path + ": field dimension or period does not match the drift");
    return f;
  }
  if (node.has("constant")) {
    node.allow({"constant"});
    const auto c = node.require<std::vector<double>>("constant");
    if (c.size() != dim) throw ConfigError(path + ".constant: need one value per dimension");
    return constant_field(dim, period, c);
  }
  if (node.has("synth")) {
    node.allow({"synth"});
    ConfigNode s = node.child("synth");
    s.allow({"alpha", "max_level", "scale", "jitter", "seed"});
    const double alpha = s.require<double>("alpha");
    const int level = s.require<int>("max_level");
    const double scale = s.get<double>("scale", 1.0);
    SynthOptions opt;
    opt.period = period;
    opt.output_dim = dim;
    opt.block_jitter = s.get<double>("jitter", 0.5);
    const auto seed = s.optional<std::uint64_t>("seed");
    const RngStream r = seed ? RngStream(*seed) : rng;
    try {
      return scaled(synth_besov_field(alpha, level, dim, r, opt), scale);
    } catch (const ContractError& e) {
      throw ConfigError(path + ".synth: " + e.what());
    }
  }
  node.allow({"zero"});
  if (node.get<bool>("zero", true)) return zero_field(dim, period, dim);
  throw ConfigError(path + ": expected one of blocks, constant, synth, zero");
}

/// {"type": zero|convolutional|bilinear|statistic, "dim", "period", field
/// slots, "profile": number or {"values": [...]}}.
inline DriftSpec parse_drift(ConfigNode node, std::uint64_t seed, const TimeGrid& grid) {
  const auto type = node.get<std::string>("type", "zero");
  const auto dim = node.get<std::size_t>("dim", 1);
  const double period = node.get<double>("period", 2.0 * std::numbers::pi);
  if (dim < 1 || dim > kMaxFieldDim) throw ConfigError(node.where("dim") + ": unsupported dimension");
  if (!(period > 0.0)) throw ConfigError(node.where("period") + ": must be positive");
  auto field = [&](const std::string& key, std::size_t fdim, std::uint64_t slot) {
    return parse_field(node.raw(key), node.where(key), fdim, period, RngStream(seed).split({stream_tag::kField, slot}));
  };
  TimeProfile profile;
  auto& pj = node.raw("profile");
  if (pj.is_null()) pj = 1.0;
  try {
    if (pj.is_number()) {
      profile = TimeProfile::constant(pj.get<double>());
    } else {
      ConfigNode p(pj, node.where("profile"));
      p.allow({"values"});
      profile = TimeProfile::tabulated(grid, p.require<std::vector<double>>("values"));
    }
  } catch (const ContractError& e) {
    throw ConfigError(node.where("profile") + ": " + e.what());
  }
  try {
    if (type == "zero") {
      node.allow({"type", "dim", "period", "profile"});
      return DriftSpec(ZeroDrift{dim, period}, profile);
    }
    if (type == "convolutional") {
      node.allow({"type", "dim", "period", "profile", "kernel", "external"});
      return DriftSpec::convolutional(field("kernel", dim, 0), field("external", dim, 1), profile);
    }
    if (type == "bilinear") {
      node.allow({"type", "dim", "period", "profile", "kernel"});
      auto& kj = node.raw("kernel");
      if (kj.is_object() && kj.contains("blocks")) return DriftSpec(BilinearKernelDrift{field_from_json(kj)}, profile);
      throw ConfigError(node.where("kernel") + ": bilinear kernels must be given as a field document");
    }
    if (type == "statistic") {
      node.allow({"type", "dim", "period", "profile", "base", "statistic", "moment_p"});
      const auto stat = node.get<std::string>("statistic", "mean");
      if (stat != "mean" && stat != "moment") throw ConfigError(node.where("statistic") + ": expected mean or moment");
      return DriftSpec(StatisticDrift{field("base", dim, 2), stat == "mean" ? StatisticKind::Mean : StatisticKind::Moment,
                                      node.get<double>("moment_p", 2.0)},
                       profile);
    }
  } catch (const ContractError& e) {
    throw ConfigError(node.where() + ": " + e.what());
  }
  throw ConfigError(node.where("type") + ": unknown drift type '" + type + "'");
}

/// {"type": gaussian|dirac|uniform, "mean", "std", "at", "lo", "hi"}.
inline InitialLaw parse_initial_law(ConfigNode node, std::size_t dim) {
  const auto type = node.get<std::string>("type", "gaussian");
  auto vec = [&](const std::string& key) {
    const auto v = node.get<std::vector<double>>(key, std::vector<double>(dim, 0.0));
    if (v.size() != dim) throw ConfigError(node.where(key) + ": need " + std::to_string(dim) + " entries");
    return v;
  };
  if (type == "gaussian") {
    node.allow({"type", "mean", "std"});
    const double sd = node.get<double>("std", 1.0);
    if (!(sd >= 0.0)) throw ConfigError(node.where("std") + ": must be >= 0");
    return InitialLaw::gaussian(vec("mean"), sd);
  }
  if (type == "dirac") {
    node.allow({"type", "at"});
    return InitialLaw::dirac(vec("at"));
  }
  if (type == "uniform") {
    node.allow({"type", "lo", "hi"});
    auto lo = vec("lo"), hi = vec("hi");
    for (std::size_t c = 0; c < dim; ++c)
      if (!(hi[c] > lo[c])) throw ConfigError(node.where("hi") + ": need hi > lo");
    return InitialLaw::uniform(std::move(lo), std::move(hi));
  }
  throw ConfigError(node.where("type") + ": unknown initial law '" + type + "'");
}

inline InitialLaw shifted(const InitialLaw& law, double h) {
  InitialLaw out = law;
  auto shift = [h](std::vector<double>& v, std::size_t dim) {
    if (v.empty()) v.assign(dim, 0.0);
    for (auto& x : v) x += h;
  };
  const std::size_t dim = std::max({law.mean.size(), law.lo.size(), std::size_t{1}});
  if (law.kind == InitialLaw::Kind::Uniform) {
    shift(out.lo, dim);
    shift(out.hi, dim);
  } else {
    shift(out.mean, dim);
  }
  return out;
}

/// The parts every experiment shares.
struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string output;
  RegimeParams params;
  SolverConfig solver;
  DriftSpec drift = DriftSpec::zero(1, 2.0 * std::numbers::pi);
  InitialLaw initial_law;
  PicardOptions picard;
  /// Whole document with defaults filled in.
  nlohmann::json resolved;
};

inline const std::vector<std::string>& experiment_tags() {
  static const std::vector<std::string> tags{"fbm-test", "avgfield", "stability", "chaos",
                                             "law_regularity", "picard", "particles"};
  return tags;
}

inline std::string canonical_tag(std::string tag) {
  if (tag == "law-regularity") return "law_regularity";
  if (tag == "fbm_test") return "fbm-test";
  for (const auto& t : experiment_tags())
    if (t == tag) return tag;
  throw ConfigError("experiment: unknown tag '" + tag + "'");
}

/// Section holding tag-specific settings.
inline std::string section_key(const std::string& tag) {
  if (tag == "fbm-test") return "fbm_test";
  if (tag == "picard" || tag == "particles") return "export";
  return tag;
}

/// Common fields only; runners resolve their own section and thresholds.
inline ExperimentConfig parse_common(nlohmann::json doc) {
  ExperimentConfig cfg;
  cfg.resolved = std::move(doc);
  ConfigNode root(cfg.resolved, "");
  cfg.experiment = canonical_tag(root.require<std::string>("experiment"));
  root.raw("experiment") = cfg.experiment;
  root.allow({"experiment", "seed", "output", "params", "solver", "drift", "initial_law", "picard",
              section_key(cfg.experiment), "thresholds"});
  cfg.seed = root.get<std::uint64_t>("seed", 0);
  cfg.output = root.get<std::string>("output", "ddsde_out/" + cfg.experiment);

  ConfigNode prm = root.child("params");
  prm.allow({"H", "alpha", "q", "p", "beta"});
  cfg.params.H = prm.get<double>("H", 0.5);
  cfg.params.alpha = prm.get<double>("alpha", 1.0);
  cfg.params.q = prm.extended("q", std::numeric_limits<double>::infinity());
  cfg.params.p = prm.get<double>("p", 1.0);
  cfg.params.beta = prm.optional<double>("beta");
  if (!(cfg.params.H > 0.0 && cfg.params.H < 1.0)) throw ConfigError("params.H: must lie in (0, 1)");
  if (!(cfg.params.p >= 1.0)) throw ConfigError("params.p: must be >= 1");

  ConfigNode sol = root.child("solver");
  sol.allow({"T", "n_steps", "n_particles", "mollify_level", "sampler", "common_random_numbers"});
  const double T = sol.get<double>("T", 1.0);
  const auto steps = sol.get<std::size_t>("n_steps", 64);
  if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("solver.T: must be positive");
  if (steps < 1) throw ConfigError("solver.n_steps: must be >= 1");
  cfg.solver.grid = TimeGrid(T, steps);
  cfg.solver.n_particles = sol.get<std::size_t>("n_particles", 256);
  if (cfg.solver.n_particles < 1) throw ConfigError("solver.n_particles: must be >= 1");
  cfg.solver.mollify_level = sol.optional<int>("mollify_level");
  const auto sampler = sol.get<std::string>("sampler", "circulant");
  if (sampler != "circulant" && sampler != "cholesky") throw ConfigError("solver.sampler: expected circulant or cholesky");
  cfg.solver.sampler = sampler == "cholesky" ? FbmSampler::Cholesky : FbmSampler::Circulant;
  cfg.solver.common_random_numbers = sol.get<bool>("common_random_numbers", true);
  cfg.solver.seed = cfg.seed;
  cfg.solver.hurst = cfg.params.H;

  cfg.drift = parse_drift(root.child("drift"), cfg.seed, cfg.solver.grid);
  cfg.initial_law = parse_initial_law(root.child("initial_law"), cfg.drift.dim());

  ConfigNode pic = root.child("picard");
  pic.allow({"tol", "max_iter", "p", "thinning", "horizon_stages"});
  cfg.picard.tol = pic.get<double>("tol", 1e-10);
  cfg.picard.max_iter = pic.get<std::size_t>("max_iter", 30);
  cfg.picard.p = pic.get<double>("p", cfg.params.p);
  cfg.picard.thinning = pic.get<std::size_t>("thinning", default_thinning(cfg.solver.grid));
  cfg.picard.horizon_stages = pic.get<std::size_t>("horizon_stages", 1);
  cfg.picard.keep_iterates = false;
  cfg.picard.regime = cfg.params;
  if (!(cfg.picard.tol > 0.0)) throw ConfigError("picard.tol: must be positive");
  if (cfg.picard.horizon_stages < 1 || cfg.picard.horizon_stages > steps)
    throw ConfigError("picard.horizon_stages: must lie in [1, n_steps]");
  return cfg;
}

}  // namespace ddsde
