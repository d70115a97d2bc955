#pragma once

// JSON form of simulation configs. A grid file is an array of records:
//   {"N": 20, "T": 512, "r": 2, "theta": [0, 0], "family": "haar",
//    "noise_cov": {"type": "DiagonalUniform", "lo": 0.5, "hi": 1.5},
//    "factor_innovation_sds": [0.9, 0.7], "burn_in": 100,
//    "loadings": [{"series": 12, "factor": 1, "name": "cosine",
//                  "params": {"a": 0.4, "omega": 9.42477796076938}}]}
// Every key except N and T is optional; series and factor are 1-based.

#include <nlohmann/json.hpp>

#include <set>
#include <string>
#include <vector>

#include "tvload/error.hpp"
#include "tvload/sim.hpp"
#include "tvload/wavelet.hpp"

namespace tvload::sim {

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
  require(obj.is_object(), ErrorKind::Parse, where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    require(allowed.count(key) > 0, ErrorKind::Parse, where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_field(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::Parse, where + ": field '" + key + "' is missing or has the wrong type (" + ex.what() + ")");
  }
}

}  // namespace detail

inline nlohmann::json noise_cov_to_json(const NoiseCov& cov) {
  if (const auto* toep = std::get_if<Toeplitz>(&cov)) return {{"type", "Toeplitz"}, {"gamma", toep->gamma}};
  const auto& d = std::get<DiagonalUniform>(cov);
  return {{"type", "DiagonalUniform"}, {"lo", d.lo}, {"hi", d.hi}};
}

inline NoiseCov noise_cov_from_json(const nlohmann::json& j, const std::string& where) {
  const auto type = detail::get_field<std::string>(j, "type", where);
  if (type == "Toeplitz") {
    detail::check_keys(j, {"type", "gamma"}, where);
    return Toeplitz{j.contains("gamma") ? detail::get_field<double>(j, "gamma", where) : 0.7};
  }
  if (type == "DiagonalUniform") {
    detail::check_keys(j, {"type", "lo", "hi"}, where);
    DiagonalUniform d;
    if (j.contains("lo")) d.lo = detail::get_field<double>(j, "lo", where);
    if (j.contains("hi")) d.hi = detail::get_field<double>(j, "hi", where);
    return d;
  }
  fail(ErrorKind::Parse, where + ": noise_cov type must be Toeplitz or DiagonalUniform, got '" + type + "'");
}

inline nlohmann::json cell_to_json(const ExperimentCell& cell) {
  const DgpConfig& c = cell.config;
  nlohmann::json j = {{"N", c.N},
                      {"T", c.T},
                      {"r", c.r},
                      {"theta", c.theta},
                      {"family", wavelet::family_name(cell.family)},
                      {"noise_cov", noise_cov_to_json(c.noise_cov)},
                      {"factor_innovation_sds", c.factor_innovation_sds},
                      {"burn_in", c.burn_in}};
  if (c.noise_scale != 1.0) j["noise_scale"] = c.noise_scale;
  if (!c.loading_spec.empty()) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [key, fn] : c.loading_spec) {
      list.push_back({{"series", key.first + 1}, {"factor", key.second + 1}, {"name", fn.name}, {"params", fn.params}});
    }
    j["loadings"] = std::move(list);
  }
  return j;
}

inline ExperimentCell cell_from_json(const nlohmann::json& j, const std::string& where) {
  detail::check_keys(j, {"N", "T", "r", "theta", "family", "noise_cov", "factor_innovation_sds", "burn_in", "noise_scale",
                         "loadings"},
                     where);
  ExperimentCell cell;
  DgpConfig& c = cell.config;
  c.N = detail::get_field<int>(j, "N", where);
  c.T = detail::get_field<int>(j, "T", where);
  if (j.contains("r")) c.r = detail::get_field<int>(j, "r", where);
  c.theta.assign(static_cast<std::size_t>(std::max(c.r, 0)), 0.0);
  if (j.contains("theta")) c.theta = detail::get_field<std::vector<double>>(j, "theta", where);
  if (j.contains("family")) cell.family = wavelet::parse_family(detail::get_field<std::string>(j, "family", where));
  if (j.contains("noise_cov")) c.noise_cov = noise_cov_from_json(j.at("noise_cov"), where + ".noise_cov");
  if (j.contains("factor_innovation_sds")) {
    c.factor_innovation_sds = detail::get_field<std::vector<double>>(j, "factor_innovation_sds", where);
  } else if (c.r != 2) {
    c.factor_innovation_sds.assign(static_cast<std::size_t>(std::max(c.r, 0)), 0.8);
  }
  if (j.contains("burn_in")) c.burn_in = detail::get_field<int>(j, "burn_in", where);
  if (j.contains("noise_scale")) c.noise_scale = detail::get_field<double>(j, "noise_scale", where);
  if (j.contains("loadings")) {
    const auto& list = j.at("loadings");
    require(list.is_array(), ErrorKind::Parse, where + ": 'loadings' must be an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string w = where + ".loadings[" + std::to_string(i) + "]";
      detail::check_keys(list[i], {"series", "factor", "name", "params"}, w);
      const int series = detail::get_field<int>(list[i], "series", w);
      const int factor = detail::get_field<int>(list[i], "factor", w);
      std::map<std::string, double> params;
      if (list[i].contains("params")) params = detail::get_field<std::map<std::string, double>>(list[i], "params", w);
      c.loading_spec[{series - 1, factor - 1}] = make_loading(detail::get_field<std::string>(list[i], "name", w), params);
    }
  }
  try {
    validate(c);
  } catch (const Error& ex) {
    fail(ex.kind(), where + ": " + ex.what());
  }
  return cell;
}

/// Parses a grid document; syntax errors report line and column.
inline std::vector<ExperimentCell> parse_grid(const std::string& text, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    fail(ErrorKind::Parse, "grid '" + source + "': " + ex.what());
  }
  require(doc.is_array(), ErrorKind::Parse, "grid '" + source + "' must be a JSON array of configs");
  require(!doc.empty(), ErrorKind::Parse, "grid '" + source + "' is empty");
  std::vector<ExperimentCell> cells;
  for (std::size_t i = 0; i < doc.size(); ++i) cells.push_back(cell_from_json(doc[i], "grid[" + std::to_string(i) + "]"));
  return cells;
}

}  // namespace tvload::sim
