#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ddsde/errors.hpp"
#include "ddsde/measure.hpp"
#include "ddsde/solver.hpp"

namespace ddsde {

namespace detail {

/// Shortest decimal form that parses back to the same double.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError(where + ": not a number: '" + s + "'");
  return v;
}

}  // namespace detail

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Rows of a CSV table: header plus data rows, each cell preformatted.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& row(std::vector<std::string> cells) {
    detail::require<ContractError>(cells.size() == header_.size(), "CsvTable: row width differs from header");
    rows_.push_back(std::move(cells));
    return *this;
  }

  [[nodiscard]] std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  [[nodiscard]] std::size_t size() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::string cell(double v) { return detail::fmt_double(v); }
inline std::string cell(std::size_t v) { return std::to_string(v); }
inline std::string cell(int v) { return std::to_string(v); }
inline std::string cell(std::string s) { return s; }

/// Columns w, x_1..x_d.
inline std::string measure_to_csv(const EmpiricalMeasure& mu) {
  std::vector<std::string> header{"w"};
  for (std::size_t c = 1; c <= mu.dim(); ++c) header.push_back("x_" + std::to_string(c));
  CsvTable t(header);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    std::vector<std::string> r{cell(mu.weight(i))};
    for (double x : mu.point(i)) r.push_back(cell(x));
    t.row(std::move(r));
  }
  return t.str();
}

inline EmpiricalMeasure measure_from_csv(const std::string& text, const std::string& where = "measure csv") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(where + ": empty document");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "w") throw ConfigError(where + ": header must be w,x_1,...,x_d");
  const std::size_t dim = header.size() - 1;
  std::vector<double> pts, w;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string here = where + " line " + std::to_string(lineno);
    if (cells.size() != dim + 1) throw ConfigError(here + ": expected " + std::to_string(dim + 1) + " columns");
    w.push_back(detail::parse_double(cells[0], here));
    for (std::size_t c = 1; c <= dim; ++c) pts.push_back(detail::parse_double(cells[c], here));
  }
  try {
    return EmpiricalMeasure::normalized(dim, std::move(pts), std::move(w));
  } catch (const ContractError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

/// One CSV per grid index plus manifest.json listing {index, t, file}.
inline void write_flow(const std::filesystem::path& dir, const MeasureFlow& flow) {
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < flow.grid.n_points(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%06zu.csv", i);
    write_text_file(dir / name, measure_to_csv(flow.at(i)));
    files.push_back({{"index", i}, {"t", flow.grid.time(i)}, {"file", name}});
  }
  const nlohmann::json manifest = {
      {"dim", flow.dim()}, {"T", flow.grid.horizon()}, {"n_steps", flow.grid.n_steps()}, {"files", files}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline MeasureFlow read_flow(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    const TimeGrid grid(manifest.at("T").get<double>(), manifest.at("n_steps").get<std::size_t>());
    std::vector<EmpiricalMeasure> ms;
    for (const auto& f : manifest.at("files")) {
      const auto name = f.at("file").get<std::string>();
      ms.push_back(measure_from_csv(read_text_file(dir / name), name));
    }
    return {grid, std::move(ms)};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("flow manifest: " + std::string(e.what()));
  } catch (const ContractError& e) {
    throw ConfigError("flow manifest: " + std::string(e.what()));
  }
}

/// Columns particle, t, x_1..x_d; one row per particle and grid time.
inline std::string ensemble_to_csv(const Ensemble& e) {
  std::vector<std::string> header{"particle", "t"};
  for (std::size_t c = 1; c <= e.dim; ++c) header.push_back("x_" + std::to_string(c));
  CsvTable t(header);
  for (std::size_t p = 0; p < e.n_particles; ++p)
    for (std::size_t it = 0; it < e.grid.n_points(); ++it) {
      std::vector<std::string> r{cell(p), cell(e.grid.time(it))};
      for (double x : e.state(p, it)) r.push_back(cell(x));
      t.row(std::move(r));
    }
  return t.str();
}

inline nlohmann::json to_json(const RegimeDecision& d) {
  return {{"regime", to_string(d.regime)},
          {"admissible", d.admissible},
          {"threshold", d.threshold},
          {"margin", d.margin},
          {"reason", d.reason}};
}

/// Gaps, ratios (NaN as null), residual and convergence flags.
inline nlohmann::json to_json(const PicardReport& r) {
  nlohmann::json j = {{"converged", r.converged},
                      {"diverged", r.diverged},
                      {"iterations", r.iterations},
                      {"tolerance", r.tolerance},
                      {"residual", r.residual},
                      {"gaps", r.gaps},
                      {"contraction_ratios", nlohmann::json::array()},
                      {"stage_of_iteration", r.stage_of_iteration},
                      {"gap_indices", r.gap_indices},
                      {"warnings", r.warnings}};
  for (double x : r.contraction_ratios)
    j["contraction_ratios"].push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
  if (r.regime) j["regime"] = to_json(*r.regime);
  return j;
}

}  // namespace ddsde
