#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfsim/core.hpp"
#include "mfsim/sim_core.hpp"

// JSON encodings shared by the store files, descriptor files, manifests and
// the stdio worker protocol.

namespace mfsim {

using Json = nlohmann::ordered_json;

// JSON has no literal for non-finite numbers; they travel as strings.
inline Json number_json(double value) {
  if (std::isfinite(value)) return value;
  if (std::isnan(value)) return "nan";
  return value > 0 ? "inf" : "-inf";
}

inline double json_number(const Json& j, const std::string& what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf" || s == "+inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-inf" || s == "-Infinity") return -std::numeric_limits<double>::infinity();
    if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  }
  throw protocol_error("io", what + " must be a number");
}

inline std::uint64_t json_seed(const Json& j, const std::string& what) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw protocol_error("io", what + " must be a non-negative integer");
}

inline const Json& require(const Json& j, const char* key, const std::string& what) {
  if (!j.is_object()) throw protocol_error("io", what + " must be an object");
  const auto it = j.find(key);
  if (it == j.end()) throw protocol_error("io", what + " is missing \"" + key + "\"");
  return *it;
}

// ---------------------------------------------------------------------------
// Values, configurations and arguments
// ---------------------------------------------------------------------------

inline Json to_json(const ParamValue& value) {
  if (const auto* number = std::get_if<double>(&value)) return number_json(*number);
  return std::get<std::string>(value);
}

inline Json to_json(const ConfigPoint& config) {
  Json out = Json::object();
  for (const auto& [name, value] : config.values()) out[name] = to_json(value);
  return out;
}

inline ConfigPoint config_from_json(const Json& j) {
  if (!j.is_object()) throw protocol_error("io", "config must be an object");
  ConfigPoint::Values values;
  for (const auto& [name, value] : j.items()) {
    if (value.is_number()) values.emplace(name, value.get<double>());
    else if (value.is_string()) values.emplace(name, value.get<std::string>());
    else if (value.is_boolean()) values.emplace(name, std::string(value.get<bool>() ? "True" : "False"));
    else throw protocol_error("io", "config value for '" + name + "' must be a number or a string");
  }
  return ConfigPoint(std::move(values));
}

inline Json to_json(const FidelityAssignment& fidels) {
  Json out = Json::object();
  for (const auto& [name, value] : fidels) out[name] = number_json(value);
  return out;
}

inline FidelityAssignment fidels_from_json(const Json& j) {
  if (!j.is_object()) throw protocol_error("io", "fidels must be an object");
  FidelityAssignment out;
  for (const auto& [name, value] : j.items()) out.emplace(name, json_number(value, "fidelity '" + name + "'"));
  return out;
}

// ---------------------------------------------------------------------------
// Search-space descriptors
// ---------------------------------------------------------------------------

inline Json to_json(const DimensionSpec& dim) {
  Json out = Json::object();
  out["name"] = dim.name;
  out["kind"] = std::string(dim.kind());
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, ContinuousRange>) {
          out["lower"] = d.lower;
          out["upper"] = d.upper;
          out["log"] = d.log;
        } else if constexpr (std::is_same_v<D, IntegerRange>) {
          out["lower"] = d.lower;
          out["upper"] = d.upper;
        } else if constexpr (std::is_same_v<D, OrdinalGrid>) {
          out["grid"] = d.grid;
        } else {
          out["choices"] = d.choices;
        }
      },
      dim.domain);
  return out;
}

inline DimensionSpec dimension_from_json(const Json& j) {
  const std::string what = "dimension";
  const auto name = require(j, "name", what).get<std::string>();
  const auto kind = require(j, "kind", what).get<std::string>();
  const std::string ctx = "dimension '" + name + "'";
  DimensionSpec dim;
  if (kind == "continuous") {
    const bool log = j.contains("log") && j.at("log").get<bool>();
    dim = DimensionSpec::continuous(name, json_number(require(j, "lower", ctx), ctx + " lower"),
                                    json_number(require(j, "upper", ctx), ctx + " upper"), log);
  } else if (kind == "integer") {
    dim = DimensionSpec::integer(name, require(j, "lower", ctx).get<std::int64_t>(),
                                 require(j, "upper", ctx).get<std::int64_t>());
  } else if (kind == "ordinal") {
    dim = DimensionSpec::ordinal(name, require(j, "grid", ctx).get<std::vector<double>>());
  } else if (kind == "categorical") {
    dim = DimensionSpec::categorical(name, require(j, "choices", ctx).get<std::vector<std::string>>());
  } else {
    throw validation_error("io", ctx + " has unknown kind '" + kind + "'");
  }
  dim.validate();
  return dim;
}

/// A search space together with the fidelity parameters and seeds a benchmark
/// exposes. This is the descriptor file format.
struct SpaceDescriptor {
  SearchSpace space;
  std::vector<DimensionSpec> fidelities;
  std::vector<std::uint64_t> seeds;

  friend bool operator==(const SpaceDescriptor&, const SpaceDescriptor&) = default;
};

inline Json to_json(const SpaceDescriptor& descriptor) {
  Json out = Json::object();
  out["name"] = descriptor.space.name();
  Json dims = Json::array();
  for (const auto& dim : descriptor.space.dimensions()) dims.push_back(to_json(dim));
  out["dimensions"] = std::move(dims);
  Json fidels = Json::array();
  for (const auto& dim : descriptor.fidelities) fidels.push_back(to_json(dim));
  out["fidelities"] = std::move(fidels);
  out["seeds"] = descriptor.seeds;
  return out;
}

inline SpaceDescriptor descriptor_from_json(const Json& j) {
  SpaceDescriptor out;
  std::vector<DimensionSpec> dims;
  for (const auto& d : require(j, "dimensions", "descriptor")) dims.push_back(dimension_from_json(d));
  out.space = SearchSpace(std::move(dims), j.value("name", std::string{}));
  std::set<std::string> fidelity_names;
  if (j.contains("fidelities")) {
    for (const auto& d : j.at("fidelities")) {
      auto dim = dimension_from_json(d);
      if (!dim.is_numeric()) throw validation_error("io", "fidelity '" + dim.name + "' must be numeric");
      if (out.space.find(dim.name) || !fidelity_names.insert(dim.name).second)
        throw validation_error("io", "fidelity name '" + dim.name + "' clashes with another parameter");
      out.fidelities.push_back(std::move(dim));
    }
  }
  if (j.contains("seeds")) {
    for (const auto& s : j.at("seeds")) out.seeds.push_back(json_seed(s, "seed"));
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path, const std::string& module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw runtime_error(module, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline Json read_json_file(const std::filesystem::path& path, const std::string& module) {
  const auto text = read_text_file(path, module);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw runtime_error(module, "corrupt file " + path.string() + ": " + e.what());
  }
}

inline SpaceDescriptor load_descriptor(const std::filesystem::path& path) {
  const auto j = read_json_file(path, "io");
  try {
    return descriptor_from_json(j);
  } catch (const Error& e) {
    throw validation_error("io", path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("io", path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Experiment settings (argument names kept verbatim)
// ---------------------------------------------------------------------------

inline Json to_json(const ExperimentSettings& s) {
  Json out = Json::object();
  out["n_workers"] = s.n_workers;
  out["n_evals"] = s.n_evals;
  out["n_actual_evals_in_opt"] = s.n_actual_evals_in_opt;
  out["continual_max_fidel"] = s.continual_max_fidel ? Json(*s.continual_max_fidel) : Json(nullptr);
  out["runtime_key"] = s.runtime_key;
  out["obj_keys"] = s.obj_keys;
  out["fidel_keys"] = s.fidel_keys.empty() ? Json(nullptr) : Json(s.fidel_keys);
  out["seed"] = s.seed ? Json(*s.seed) : Json(nullptr);
  out["max_waiting_time"] = number_json(s.max_waiting_time);
  out["store_config"] = s.store_config;
  out["check_interval_time"] = s.check_interval_time;
  out["save_dir_name"] = s.save_dir_name;
  return out;
}

inline ExperimentSettings settings_from_json(const Json& j) {
  static const std::set<std::string> kKnown = {
      "n_workers",   "n_evals",          "n_actual_evals_in_opt", "continual_max_fidel",
      "runtime_key", "obj_keys",         "fidel_keys",            "seed",
      "max_waiting_time", "store_config", "check_interval_time",  "save_dir_name"};
  if (!j.is_object()) throw validation_error("io", "settings must be an object");
  for (const auto& [key, value] : j.items())
    if (!kKnown.contains(key)) throw validation_error("io", "unknown setting '" + key + "'");

  ExperimentSettings s;
  try {
    if (j.contains("n_workers")) s.n_workers = j.at("n_workers").get<std::size_t>();
    if (j.contains("n_evals")) s.n_evals = j.at("n_evals").get<std::size_t>();
    s.n_actual_evals_in_opt = j.contains("n_actual_evals_in_opt")
                                  ? j.at("n_actual_evals_in_opt").get<std::size_t>()
                                  : s.n_evals + s.n_workers;
    if (j.contains("continual_max_fidel") && !j.at("continual_max_fidel").is_null())
      s.continual_max_fidel = j.at("continual_max_fidel").get<std::int64_t>();
    if (j.contains("runtime_key")) s.runtime_key = j.at("runtime_key").get<std::string>();
    if (j.contains("obj_keys")) s.obj_keys = j.at("obj_keys").get<std::vector<std::string>>();
    if (j.contains("fidel_keys") && !j.at("fidel_keys").is_null())
      s.fidel_keys = j.at("fidel_keys").get<std::vector<std::string>>();
    if (j.contains("seed") && !j.at("seed").is_null()) s.seed = json_seed(j.at("seed"), "seed");
    if (j.contains("max_waiting_time")) s.max_waiting_time = json_number(j.at("max_waiting_time"), "max_waiting_time");
    if (j.contains("store_config")) s.store_config = j.at("store_config").get<bool>();
    if (j.contains("check_interval_time"))
      s.check_interval_time = json_number(j.at("check_interval_time"), "check_interval_time");
    if (j.contains("save_dir_name")) s.save_dir_name = j.at("save_dir_name").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("io", std::string("malformed settings: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Observation records (one JSON object per results line)
// ---------------------------------------------------------------------------

/// Objectives are written in obj_keys order followed by any other key.
inline Json objectives_json(const std::map<std::string, double, std::less<>>& objectives,
                            const std::vector<std::string>& order) {
  Json out = Json::object();
  for (const auto& key : order) {
    const auto it = objectives.find(key);
    if (it != objectives.end()) out[key] = number_json(it->second);
  }
  for (const auto& [key, value] : objectives)
    if (!out.contains(key)) out[key] = number_json(value);
  return out;
}

inline Json to_json(const ObservationRecord& r, bool store_config, const std::vector<std::string>& key_order = {}) {
  Json out = Json::object();
  out["index"] = r.index;
  out["worker"] = r.worker;
  out["finish_time"] = number_json(r.finish_time);
  out["runtime"] = number_json(r.runtime);
  out["restart_credit"] = number_json(r.restart_credit);
  out["sample_latency"] = number_json(r.sample_latency);
  out["objectives"] = objectives_json(r.objectives, key_order);
  if (store_config) {
    out["config"] = to_json(r.config);
    if (r.args.fidels) out["fidels"] = to_json(*r.args.fidels);
    if (r.args.seed) out["seed"] = *r.args.seed;
  }
  return out;
}

inline ObservationRecord record_from_json(const Json& j) {
  const std::string what = "result record";
  ObservationRecord r;
  try {
    r.index = require(j, "index", what).get<std::size_t>();
    r.worker = require(j, "worker", what).get<std::size_t>();
    r.finish_time = json_number(require(j, "finish_time", what), "finish_time");
    r.runtime = json_number(require(j, "runtime", what), "runtime");
    r.restart_credit = j.contains("restart_credit") ? json_number(j.at("restart_credit"), "restart_credit") : 0.0;
    r.sample_latency = j.contains("sample_latency") ? json_number(j.at("sample_latency"), "sample_latency") : 0.0;
    const auto& objectives = require(j, "objectives", what);
    if (!objectives.is_object()) throw protocol_error("io", "objectives must be an object");
    for (const auto& [key, value] : objectives.items()) r.objectives.emplace(key, json_number(value, key));
    if (j.contains("config")) r.config = config_from_json(j.at("config"));
    if (j.contains("fidels")) r.args.fidels = fidels_from_json(j.at("fidels"));
    if (j.contains("seed")) r.args.seed = json_seed(j.at("seed"), "seed");
  } catch (const nlohmann::json::exception& e) {
    throw protocol_error("io", std::string("malformed result record: ") + e.what());
  }
  return r;
}

}  // namespace mfsim
