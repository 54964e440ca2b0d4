#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ddsde/config.hpp"
#include "ddsde/errors.hpp"
#include "ddsde/experiments.hpp"
#include "ddsde/io.hpp"

namespace ddsde {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

namespace detail {

inline nlohmann::json load_config_document(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // parse_error messages carry "at line L, column C".
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace detail

/// Parse argv, run one experiment, write its outputs. Returns 0 on success,
/// 2 on configuration or output errors, 3 on numerical failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"ddsde: distribution-dependent SDEs driven by fractional Brownian motion"};
  app.set_version_flag("--version", std::string(DDSDE_VERSION));
  app.require_subcommand(1);

  std::string config_path, output;
  std::optional<std::uint64_t> seed;
  std::vector<double> fbm_H;
  std::optional<std::size_t> fbm_n, fbm_paths;
  std::optional<std::string> fbm_sampler;
  bool fbm_cross = false, export_flow = false, export_ensemble = false;

  struct Sub {
    const char* name;
    const char* tag;
    const char* help;
  };
  const Sub subs[] = {
      {"fbm-test", "fbm-test", "Monte Carlo self-test of the fBm samplers"},
      {"avgfield", "avgfield", "time-regularity exponent of averaged fields"},
      {"stability", "stability", "stability of the solution law under drift / initial-law perturbations"},
      {"chaos", "chaos", "particle system vs mean-field law across N"},
      {"law-regularity", "law_regularity", "density estimates of the solution law"},
      {"picard", "picard", "Picard fixed-point iteration on measure flows"},
      {"particles", "particles", "interacting particle system"},
      {"run", "", "run the experiment named in the config document"},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    auto* c = sub->add_option("--config,-c", config_path, "config document (JSON)");
    if (std::string(s.tag).empty()) c->required();
    else c->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--output,-o", output, "output directory");
    if (std::string(s.tag) == "fbm-test") {
      sub->add_option("--H", fbm_H, "Hurst parameter(s)");
      sub->add_option("--n", fbm_n, "number of time steps");
      sub->add_option("--paths", fbm_paths, "number of sample paths");
      sub->add_option("--sampler", fbm_sampler, "circulant or cholesky");
      sub->add_flag("--cross-check", fbm_cross, "also compare against the other sampler");
    }
    if (std::string(s.tag) == "picard" || std::string(s.tag) == "particles") {
      sub->add_flag("--export-flow", export_flow, "write the final measure flow");
      sub->add_flag("--export-ensemble", export_ensemble, "write all trajectories as CSV (large)");
    }
    apps.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    std::string tag;
    for (std::size_t i = 0; i < apps.size(); ++i)
      if (apps[i]->parsed()) tag = subs[i].tag;
    nlohmann::json doc = config_path.empty() ? nlohmann::json::object() : detail::load_config_document(config_path);
    if (!doc.is_object()) throw ConfigError(config_path + ": top level must be an object");
    if (!tag.empty()) {
      if (doc.contains("experiment") && canonical_tag(doc["experiment"].get<std::string>()) != tag)
        throw ConfigError("experiment: config names '" + doc["experiment"].get<std::string>() + "' but the subcommand is '" +
                          tag + "'");
      doc["experiment"] = tag;
    }
    if (seed) doc["seed"] = *seed;
    if (!output.empty()) doc["output"] = output;
    if (tag == "fbm-test") {
      auto& s = doc["fbm_test"];
      if (s.is_null()) s = nlohmann::json::object();
      if (!fbm_H.empty()) s["H"] = fbm_H;
      if (fbm_n) s["n_steps"] = *fbm_n;
      if (fbm_paths) s["paths"] = *fbm_paths;
      if (fbm_sampler) s["sampler"] = *fbm_sampler;
      if (fbm_cross) s["cross_check"] = true;
    }
    if (export_flow || export_ensemble) {
      auto& s = doc["export"];
      if (s.is_null()) s = nlohmann::json::object();
      if (export_flow) s["flow"] = true;
      if (export_ensemble) s["ensemble"] = true;
    }
    ExperimentConfig cfg = parse_common(std::move(doc));
    const Report rep = run_experiment(cfg);
    write_report(rep, cfg.output);
    out << (std::filesystem::path(cfg.output) / "summary.json").string() << '\n';
    for (const auto& c : rep.summary["checks"])
      out << (c["passed"].get<bool>() ? "ok    " : "FAIL  ") << c["name"].get<std::string>() << " = " << c["value"].dump()
          << " (threshold " << c["threshold"].dump() << ")\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const ContractError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const IoError& e) {
    err << "output error: " << e.what() << '\n';
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ResourceError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitConfig;
}

}  // namespace ddsde
