#pragma once

#include <json.hpp>

#include <string>

#include "ddsde/errors.hpp"
#include "ddsde/field.hpp"

namespace ddsde {

/// {d, L, output_dim, blocks: [{n, modes: [{k, re, im}]}]}. Scalars for re/im
/// when output_dim == 1, arrays otherwise. Doubles round-trip exactly.
inline nlohmann::json field_to_json(const SpectralField& f) {
  nlohmann::json blocks = nlohmann::json::array();
  const std::size_t od = f.output_dim();
  for (const auto& b : f.blocks()) {
    nlohmann::json modes = nlohmann::json::array();
    for (std::size_t m = 0; m < b.n_modes(); ++m) {
      nlohmann::json k = nlohmann::json::array();
      for (std::size_t i = 0; i < f.dim(); ++i) k.push_back(b.wavevectors[m][i]);
      nlohmann::json mode = {{"k", k}};
      if (od == 1) {
        mode["re"] = b.coeffs[m].real();
        mode["im"] = b.coeffs[m].imag();
      } else {
        nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
        for (std::size_t o = 0; o < od; ++o) {
          re.push_back(b.coeffs[m * od + o].real());
          im.push_back(b.coeffs[m * od + o].imag());
        }
        mode["re"] = re;
        mode["im"] = im;
      }
      modes.push_back(std::move(mode));
    }
    blocks.push_back({{"n", b.level}, {"modes", std::move(modes)}});
  }
  return {{"d", f.dim()}, {"L", f.period()}, {"output_dim", od}, {"blocks", std::move(blocks)}};
}

inline SpectralField field_from_json(const nlohmann::json& j) {
  try {
    const auto dim = j.at("d").get<std::size_t>();
    const auto period = j.at("L").get<double>();
    const auto od = j.value("output_dim", std::size_t{1});
    FieldBuilder builder(dim, period, od);
    std::vector<complex> c(od);
    for (const auto& blk : j.at("blocks")) {
      const int level = blk.at("n").get<int>();
      for (const auto& mode : blk.at("modes")) {
        const auto& kj = mode.at("k");
        if (kj.size() != dim) throw ConfigError("field: wave number length differs from d");
        Wavevector k{};
        for (std::size_t i = 0; i < dim; ++i) k[i] = kj[i].get<int>();
        if (block_level(k, dim) != level)
          throw ConfigError("field: mode " + kj.dump() + " does not belong to block " + std::to_string(level));
        const auto& re = mode.at("re");
        const auto& im = mode.value("im", nlohmann::json(0.0));
        for (std::size_t o = 0; o < od; ++o) {
          const double r = re.is_array() ? re.at(o).get<double>() : re.get<double>();
          const double i = im.is_array() ? im.at(o).get<double>() : im.get<double>();
          c[o] = complex(r, i);
        }
        builder.add(k, c);
      }
    }
    return builder.build();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field: malformed document: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(std::string("field: ") + e.what());
  }
}

}  // namespace ddsde
