#pragma once

// Sweep configuration, read from JSON whose keys match the field names.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "droprate/csv.hpp"
#include "droprate/flow.hpp"
#include "droprate/model.hpp"

namespace droprate {

struct InitSpec {
  enum class Kind { Gaussian, Epsilon } kind = Kind::Gaussian;
  double scale = 0.1;  // sigma or epsilon

  std::string name() const { return kind == Kind::Gaussian ? "gaussian" : "epsilon"; }
};

/// "gaussian:SIGMA" or "epsilon:EPS".
inline InitSpec parse_init(std::string_view s) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) throw ConfigError("init must look like gaussian:SIGMA or epsilon:EPS");
  const std::string_view kind = s.substr(0, colon);
  const auto value = csv::parse_number(s.substr(colon + 1));
  if (!value) throw ConfigError("init scale is not a number: " + std::string(s));
  InitSpec init;
  if (kind == "gaussian") {
    init.kind = InitSpec::Kind::Gaussian;
    if (!(*value > 0.0)) throw ConfigError("gaussian sigma must be positive");
  } else if (kind == "epsilon") {
    init.kind = InitSpec::Kind::Epsilon;
    if (!(*value >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  } else {
    throw ConfigError("unknown init kind: " + std::string(kind));
  }
  init.scale = *value;
  return init;
}

inline std::string to_string(const InitSpec& init) { return init.name() + ":" + csv::format(init.scale); }

struct SweepConfig {
  Variant variant = Variant::Dropout;
  std::vector<Index> f_list;
  std::vector<double> p_list;
  int replicates = 1;
  InitSpec init;
  double eta = 1e-2;
  StopRule stop;
  double gamma = 0.9;
  std::uint64_t master_seed = 0;
  long stride = 0;  // 0: automatic
  bool normalize_Y = true;

  void validate() const {
    if (f_list.empty()) throw ConfigError("f_list is empty");
    if (p_list.empty()) throw ConfigError("p_list is empty");
    for (Index f : f_list)
      if (f < 1) throw ConfigError("f_list entries must be positive");
    for (double p : p_list)
      if (!(p > 0.0 && p <= 1.0)) throw ConfigError("p_list entries must lie in (0,1]");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    if (!(eta > 0.0)) throw ConfigError("eta must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0,1)");
    if (stride < 0) throw ConfigError("stride must be nonnegative");
    stop.validate();
  }
};

namespace detail {

template <class T>
T json_get(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

/// Unknown keys are rejected; variant, f_list, p_list and init are required.
inline SweepConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"variant", "f_list", "p_list", "replicates", "init",        "eta",
                                           "stop",    "gamma",  "master_seed", "stride", "normalize_Y"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key: " + key);
  for (const char* key : {"variant", "f_list", "p_list", "init"})
    if (!j.contains(key)) throw ConfigError(std::string("missing config key: ") + key);

  SweepConfig c;
  c.variant = parse_variant(detail::json_get<std::string>(j, "variant"));
  c.f_list = detail::json_get<std::vector<Index>>(j, "f_list");
  c.p_list = detail::json_get<std::vector<double>>(j, "p_list");
  c.init = parse_init(detail::json_get<std::string>(j, "init"));
  if (j.contains("replicates")) c.replicates = detail::json_get<int>(j, "replicates");
  if (j.contains("eta")) c.eta = detail::json_get<double>(j, "eta");
  if (j.contains("gamma")) c.gamma = detail::json_get<double>(j, "gamma");
  if (j.contains("master_seed")) c.master_seed = detail::json_get<std::uint64_t>(j, "master_seed");
  if (j.contains("stride")) c.stride = detail::json_get<long>(j, "stride");
  if (j.contains("normalize_Y")) c.normalize_Y = detail::json_get<bool>(j, "normalize_Y");
  if (j.contains("stop")) {
    const auto& s = j.at("stop");
    if (!s.is_object()) throw ConfigError("stop must be an object");
    for (const auto& [key, _] : s.items())
      if (key != "grad_tol" && key != "t_max") throw ConfigError("unknown stop key: " + key);
    if (s.contains("grad_tol")) c.stop.grad_tol = detail::json_get<double>(s, "grad_tol");
    if (s.contains("t_max")) c.stop.t_max = detail::json_get<long>(s, "t_max");
  }
  c.validate();
  return c;
}

inline SweepConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

}  // namespace droprate
