#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

#include "mfsim/error.hpp"

namespace mfsim {

/// 1-based worker slot, p in [P].
using WorkerIndex = std::size_t;

/// A hyperparameter value: numeric (continuous, integer, ordinal) or a symbol.
using ParamValue = std::variant<double, std::string>;

/// Shortest decimal text that parses back to the same double. -0 prints as 0.
inline std::string format_number(double value) {
  if (value == 0.0) return "0";
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc{}) throw runtime_error("core", "number formatting failed");
  return std::string(buffer, end);
}

// JSON string quoting, used for names and symbols inside identity keys.
inline void append_quoted(std::string& out, std::string_view text) {
  static constexpr char kHex[] = "0123456789abcdef";
  out.push_back('"');
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          out += "\\u00";
          out.push_back(kHex[c >> 4]);
          out.push_back(kHex[c & 0xf]);
        } else {
          out.push_back(ch);
        }
    }
  }
  out.push_back('"');
}

inline std::string describe(const ParamValue& value) {
  if (const auto* number = std::get_if<double>(&value)) return format_number(*number);
  std::string out;
  append_quoted(out, std::get<std::string>(value));
  return out;
}

// ---------------------------------------------------------------------------
// Search space
// ---------------------------------------------------------------------------

struct ContinuousRange {
  double lower = 0.0;
  double upper = 1.0;
  bool log = false;  // metadata only; samplers decide what to do with it
  friend bool operator==(const ContinuousRange&, const ContinuousRange&) = default;
};

struct IntegerRange {
  std::int64_t lower = 0;
  std::int64_t upper = 1;
  friend bool operator==(const IntegerRange&, const IntegerRange&) = default;
};

struct OrdinalGrid {
  std::vector<double> grid;
  friend bool operator==(const OrdinalGrid&, const OrdinalGrid&) = default;
};

struct CategoricalSet {
  std::vector<std::string> choices;
  friend bool operator==(const CategoricalSet&, const CategoricalSet&) = default;
};

using Domain = std::variant<ContinuousRange, IntegerRange, OrdinalGrid, CategoricalSet>;

struct DimensionSpec {
  std::string name;
  Domain domain;

  static DimensionSpec continuous(std::string name, double lower, double upper,
                                  bool log = false) {
    return {std::move(name), ContinuousRange{lower, upper, log}};
  }
  static DimensionSpec integer(std::string name, std::int64_t lower, std::int64_t upper) {
    return {std::move(name), IntegerRange{lower, upper}};
  }
  static DimensionSpec ordinal(std::string name, std::vector<double> grid) {
    return {std::move(name), OrdinalGrid{std::move(grid)}};
  }
  static DimensionSpec categorical(std::string name, std::vector<std::string> choices) {
    return {std::move(name), CategoricalSet{std::move(choices)}};
  }

  std::string_view kind() const {
    static constexpr std::string_view kNames[] = {"continuous", "integer", "ordinal",
                                                  "categorical"};
    return kNames[domain.index()];
  }

  bool is_numeric() const { return !std::holds_alternative<CategoricalSet>(domain); }

  /// Throws a validation error if the domain itself is malformed.
  void validate() const {
    if (name.empty()) throw validation_error("core", "dimension name must not be empty");
    const auto fail = [&](const std::string& why) {
      throw validation_error("core", "dimension '" + name + "': " + why);
    };
    std::visit(
        [&](const auto& d) {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, ContinuousRange>) {
            if (!std::isfinite(d.lower) || !std::isfinite(d.upper)) fail("bounds must be finite");
            if (!(d.lower < d.upper)) fail("lower must be < upper");
            if (d.log && d.lower <= 0.0) fail("log-scaled bounds must be positive");
          } else if constexpr (std::is_same_v<D, IntegerRange>) {
            if (!(d.lower < d.upper)) fail("lower must be < upper");
          } else if constexpr (std::is_same_v<D, OrdinalGrid>) {
            if (d.grid.empty()) fail("ordinal grid must not be empty");
            for (std::size_t i = 0; i < d.grid.size(); ++i) {
              if (!std::isfinite(d.grid[i])) fail("ordinal grid values must be finite");
              if (i > 0 && !(d.grid[i - 1] < d.grid[i])) fail("ordinal grid must be strictly increasing");
            }
          } else {
            if (d.choices.empty()) fail("categorical choices must not be empty");
            const std::set<std::string> unique(d.choices.begin(), d.choices.end());
            if (unique.size() != d.choices.size()) fail("categorical choices must be unique");
          }
        },
        domain);
  }

  bool contains(const ParamValue& value) const {
    return std::visit(
        [&](const auto& d) -> bool {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, CategoricalSet>) {
            const auto* symbol = std::get_if<std::string>(&value);
            return symbol && std::find(d.choices.begin(), d.choices.end(), *symbol) != d.choices.end();
          } else {
            const auto* number = std::get_if<double>(&value);
            if (!number || !std::isfinite(*number)) return false;
            const double v = *number;
            if constexpr (std::is_same_v<D, ContinuousRange>) {
              return d.lower <= v && v <= d.upper;
            } else if constexpr (std::is_same_v<D, IntegerRange>) {
              return v == std::floor(v) && static_cast<double>(d.lower) <= v &&
                     v <= static_cast<double>(d.upper);
            } else {
              return std::binary_search(d.grid.begin(), d.grid.end(), v);
            }
          }
        },
        domain);
  }

  /// Number of distinct values, or nullopt for continuous dimensions.
  std::optional<double> cardinality() const {
    return std::visit(
        [](const auto& d) -> std::optional<double> {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, ContinuousRange>) return std::nullopt;
          else if constexpr (std::is_same_v<D, IntegerRange>) return static_cast<double>(d.upper - d.lower + 1);
          else if constexpr (std::is_same_v<D, OrdinalGrid>) return static_cast<double>(d.grid.size());
          else return static_cast<double>(d.choices.size());
        },
        domain);
  }

  /// Largest value of a numeric dimension.
  double upper_bound() const {
    return std::visit(
        [&](const auto& d) -> double {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, ContinuousRange>) return d.upper;
          else if constexpr (std::is_same_v<D, IntegerRange>) return static_cast<double>(d.upper);
          else if constexpr (std::is_same_v<D, OrdinalGrid>) return d.grid.back();
          else throw validation_error("core", "categorical dimension '" + name + "' has no upper bound");
        },
        domain);
  }

  friend bool operator==(const DimensionSpec&, const DimensionSpec&) = default;
};

class ConfigPoint;

/// Ordered product of dimensions X_1 x ... x X_D.
class SearchSpace {
 public:
  SearchSpace() = default;

  explicit SearchSpace(std::vector<DimensionSpec> dimensions, std::string name = {})
      : name_(std::move(name)), dimensions_(std::move(dimensions)) {
    std::set<std::string> seen;
    for (const auto& dim : dimensions_) {
      dim.validate();
      if (!seen.insert(dim.name).second)
        throw validation_error("core", "duplicate dimension name '" + dim.name + "'");
    }
  }

  const std::string& name() const noexcept { return name_; }
  std::span<const DimensionSpec> dimensions() const noexcept { return dimensions_; }
  std::size_t size() const noexcept { return dimensions_.size(); }

  const DimensionSpec* find(std::string_view name) const {
    for (const auto& dim : dimensions_)
      if (dim.name == name) return &dim;
    return nullptr;
  }

  std::optional<double> cardinality() const {
    double total = 1.0;
    for (const auto& dim : dimensions_) {
      const auto n = dim.cardinality();
      if (!n) return std::nullopt;
      total *= *n;
    }
    return total;
  }

  /// Throws naming the offending dimension unless config lies in this space.
  inline void check(const ConfigPoint& config) const;

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;

 private:
  std::string name_;
  std::vector<DimensionSpec> dimensions_;
};

// ---------------------------------------------------------------------------
// Configurations and query arguments
// ---------------------------------------------------------------------------

/// One hyperparameter configuration x. Immutable after construction.
class ConfigPoint {
 public:
  using Values = std::map<std::string, ParamValue, std::less<>>;

  ConfigPoint() = default;
  explicit ConfigPoint(Values values) : values_(std::move(values)) {}
  ConfigPoint(std::initializer_list<Values::value_type> values) : values_(values) {}

  const Values& values() const noexcept { return values_; }
  bool empty() const noexcept { return values_.empty(); }

  const ParamValue& at(std::string_view name) const {
    const auto it = values_.find(name);
    if (it == values_.end())
      throw validation_error("core", "configuration has no value for '" + std::string(name) + "'");
    return it->second;
  }

  double number(std::string_view name) const {
    const auto& value = at(name);
    if (const auto* number = std::get_if<double>(&value)) return *number;
    throw validation_error("core", "value of '" + std::string(name) + "' is not numeric");
  }

  const std::string& symbol(std::string_view name) const {
    const auto& value = at(name);
    if (const auto* symbol = std::get_if<std::string>(&value)) return *symbol;
    throw validation_error("core", "value of '" + std::string(name) + "' is not a symbol");
  }

  /// Canonical identity: sorted names, shortest round-trip numbers, quoted
  /// symbols. Stable across processes and injective over value maps.
  std::string key() const {
    std::string out = "{";
    bool first = true;
    for (const auto& [name, value] : values_) {
      if (!first) out.push_back(',');
      first = false;
      append_quoted(out, name);
      out.push_back(':');
      if (const auto* number = std::get_if<double>(&value)) {
        out += format_number(*number);
      } else {
        append_quoted(out, std::get<std::string>(value));
      }
    }
    out.push_back('}');
    return out;
  }

  friend bool operator==(const ConfigPoint&, const ConfigPoint&) = default;

 private:
  Values values_;
};

inline std::string canonical_key(const ConfigPoint& config) { return config.key(); }

inline void SearchSpace::check(const ConfigPoint& config) const {
  for (const auto& [name, value] : config.values()) {
    const auto* dim = find(name);
    if (!dim) throw validation_error("core", "unknown dimension '" + name + "'");
    if (!dim->contains(value))
      throw validation_error("core", "value " + describe(value) + " is outside the domain of '" + name + "'");
  }
  for (const auto& dim : dimensions_)
    if (!config.values().contains(dim.name))
      throw validation_error("core", "configuration is missing '" + dim.name + "'");
}

/// Named fidelity values of one query.
using FidelityAssignment = std::map<std::string, double, std::less<>>;

inline std::string canonical_key(const FidelityAssignment& fidels) {
  std::string out = "{";
  bool first = true;
  for (const auto& [name, value] : fidels) {
    if (!first) out.push_back(',');
    first = false;
    append_quoted(out, name);
    out.push_back(':');
    out += format_number(value);
  }
  out.push_back('}');
  return out;
}

/// The query arguments a^(n): fidelities plus an optional seed.
struct QueryArgs {
  std::optional<FidelityAssignment> fidels;
  std::optional<std::uint64_t> seed;

  friend bool operator==(const QueryArgs&, const QueryArgs&) = default;
};

/// Benchmark output for one query: objective values (keyed by obj_keys, plus
/// the runtime key) and the simulated runtime tau in seconds.
struct QueryResult {
  std::map<std::string, double, std::less<>> objectives;
  double runtime = 0.0;

  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

/// Restart checkpoint s_n = (tau_n, T, a_n).
struct IntermediateState {
  double runtime_spent = 0.0;
  double completion_time = 0.0;
  QueryArgs args;

  friend bool operator==(const IntermediateState&, const IntermediateState&) = default;
};

/// Per-worker cumulative simulated runtimes T_p plus the global clock T_now.
struct SimClock {
  std::vector<double> worker_times;
  double now = 0.0;
  std::size_t observations = 0;

  SimClock() = default;
  explicit SimClock(std::size_t n_workers) : worker_times(n_workers, 0.0) {}

  std::size_t workers() const noexcept { return worker_times.size(); }
  double time(WorkerIndex p) const { return worker_times.at(p - 1); }

  /// Worker that becomes free first; ties go to the lowest index.
  WorkerIndex argmin() const {
    const auto it = std::min_element(worker_times.begin(), worker_times.end());
    return static_cast<WorkerIndex>(it - worker_times.begin()) + 1;
  }

  friend bool operator==(const SimClock&, const SimClock&) = default;
};

// ---------------------------------------------------------------------------
// Experiment settings
// ---------------------------------------------------------------------------

struct ExperimentSettings {
  std::size_t n_workers = 1;
  std::size_t n_evals = 1;
  std::size_t n_actual_evals_in_opt = 2;
  std::optional<std::int64_t> continual_max_fidel;
  std::string runtime_key = "runtime";
  std::vector<std::string> obj_keys{"loss"};
  std::vector<std::string> fidel_keys;  // empty: no fidelity arguments
  std::optional<std::uint64_t> seed;
  double max_waiting_time = std::numeric_limits<double>::infinity();
  bool store_config = false;
  double check_interval_time = 0.01;
  std::string save_dir_name = "default";

  bool has_fidelities() const noexcept { return !fidel_keys.empty(); }
  bool restart_enabled() const noexcept { return continual_max_fidel.has_value(); }

  friend bool operator==(const ExperimentSettings&, const ExperimentSettings&) = default;
};

/// Returns the settings unchanged if every invariant holds; throws otherwise.
inline const ExperimentSettings& validate_settings(const ExperimentSettings& s) {
  const auto fail = [](const std::string& why) { throw validation_error("core", why); };
  if (s.n_workers == 0) fail("n_workers must be positive");
  if (s.n_evals == 0) fail("n_evals must be positive");
  if (s.n_actual_evals_in_opt < s.n_evals + s.n_workers)
    fail("n_actual_evals_in_opt (" + std::to_string(s.n_actual_evals_in_opt) +
         ") must be at least n_evals + n_workers (" + std::to_string(s.n_evals + s.n_workers) + ")");
  if (s.continual_max_fidel) {
    if (s.fidel_keys.size() != 1)
      fail("continual_max_fidel requires exactly one fidelity key; restart is allowed only with a single fidelity parameter");
    if (*s.continual_max_fidel <= 0) fail("continual_max_fidel must be positive");
  }
  if (s.runtime_key.empty()) fail("runtime_key must not be empty");
  if (s.obj_keys.empty()) fail("obj_keys must not be empty");
  if (std::set<std::string>(s.obj_keys.begin(), s.obj_keys.end()).size() != s.obj_keys.size())
    fail("obj_keys must be unique");
  if (std::set<std::string>(s.fidel_keys.begin(), s.fidel_keys.end()).size() != s.fidel_keys.size())
    fail("fidel_keys must be unique");
  if (!(s.check_interval_time > 0.0) || !std::isfinite(s.check_interval_time))
    fail("check_interval_time must be a positive number of seconds");
  if (!(s.max_waiting_time > 0.0)) fail("max_waiting_time must be positive");
  if (s.save_dir_name.empty() || s.save_dir_name.find('/') != std::string::npos ||
      s.save_dir_name == "." || s.save_dir_name == "..")
    fail("save_dir_name must be a plain directory name");
  return s;
}

/// Checks a^(n) against the declared fidel_keys and their domains.
inline void check_query_args(const QueryArgs& args, const ExperimentSettings& settings,
                             std::span<const DimensionSpec> fidelity_specs) {
  if (!settings.has_fidelities()) {
    if (args.fidels && !args.fidels->empty())
      throw validation_error("core", "fidelities were given but the experiment declares no fidel_keys");
    return;
  }
  if (!args.fidels) throw validation_error("core", "query is missing fidelities");
  for (const auto& [name, value] : *args.fidels) {
    if (std::find(settings.fidel_keys.begin(), settings.fidel_keys.end(), name) == settings.fidel_keys.end())
      throw validation_error("core", "unknown fidelity key '" + name + "'");
    for (const auto& spec : fidelity_specs)
      if (spec.name == name && !spec.contains(value))
        throw validation_error("core", "fidelity " + name + "=" + format_number(value) + " is out of bounds");
  }
  for (const auto& key : settings.fidel_keys)
    if (!args.fidels->contains(key)) throw validation_error("core", "missing fidelity key '" + key + "'");
}

}  // namespace mfsim
