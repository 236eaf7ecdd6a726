#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mfsim/core.hpp"
#include "mfsim/rng.hpp"

namespace mfsim {

using Metrics = std::map<std::string, double, std::less<>>;

/// A cheap-to-query oracle of f and tau.
class Benchmark {
 public:
  virtual ~Benchmark() = default;

  virtual std::string name() const = 0;
  virtual const SearchSpace& space() const = 0;
  virtual std::span<const DimensionSpec> fidelities() const = 0;

  /// Every metric the benchmark produces for one query, the runtime included.
  /// rng is only consulted by benchmarks with seed-indexed noise.
  virtual Metrics evaluate(const ConfigPoint& config, const QueryArgs& args, Rng& rng) const = 0;
};

/// Adapts a Benchmark to the (config, args, ask_number) -> QueryResult shape
/// the simulators consume, picking obj_keys and runtime_key out of the raw
/// metrics.
class BenchmarkObjective {
 public:
  BenchmarkObjective(const Benchmark& benchmark, ExperimentSettings settings)
      : benchmark_(&benchmark), settings_(std::move(settings)) {}

  QueryResult operator()(const ConfigPoint& config, const QueryArgs& args, std::size_t ask_number) const {
    benchmark_->space().check(config);
    check_query_args(args, settings_, benchmark_->fidelities());
    Rng rng(mix_seed(settings_.seed.value_or(0), ask_number));
    const auto raw = benchmark_->evaluate(config, args, rng);
    return select(raw);
  }

  QueryResult select(const Metrics& raw) const {
    QueryResult out;
    const auto runtime = raw.find(settings_.runtime_key);
    if (runtime == raw.end())
      throw runtime_error("benchmarks", benchmark_->name() + " output has no runtime key '" + settings_.runtime_key + "'");
    for (const auto& key : settings_.obj_keys) {
      const auto it = raw.find(key);
      if (it == raw.end())
        throw runtime_error("benchmarks", benchmark_->name() + " output has no objective '" + key + "'");
      out.objectives.emplace(key, it->second);
    }
    out.objectives.emplace(settings_.runtime_key, runtime->second);
    out.runtime = runtime->second;
    if (!(out.runtime >= 0.0) || !std::isfinite(out.runtime))
      throw runtime_error("benchmarks", benchmark_->name() + " returned invalid runtime " + format_number(out.runtime));
    return out;
  }

 private:
  const Benchmark* benchmark_;
  ExperimentSettings settings_;
};

// ---------------------------------------------------------------------------
// Multi-fidelity Branin
// ---------------------------------------------------------------------------

struct MfBraninParams {
  double a = 1.0;
  double b = 5.1 / (4.0 * std::numbers::pi * std::numbers::pi);
  double c = 5.0 / std::numbers::pi;
  double r = 6.0;
  double s = 10.0;
  double t = 1.0 / (8.0 * std::numbers::pi);
  double delta_b = 1e-2;
  double delta_c = 1e-1;
  double delta_t = 5e-3;
  double runtime_scale = 3600.0;  // C: runtime at full fidelity
};

inline constexpr std::size_t kBraninFidelityDim = 3;

namespace detail {

inline void check_interval(const char* name, double value, double lower, double upper, const char* module) {
  if (!(lower <= value && value <= upper))
    throw validation_error(module, std::string(name) + "=" + format_number(value) + " is outside [" +
                                       format_number(lower) + ", " + format_number(upper) + "]");
}

// One scalar is replicated over all K coordinates.
template <std::size_t K>
std::array<double, K> expand_fidelity(std::span<const double> z, const char* module) {
  std::array<double, K> out{};
  if (z.size() == 1) out.fill(z[0]);
  else if (z.size() == K) std::copy(z.begin(), z.end(), out.begin());
  else
    throw validation_error(module, "fidelity vector must have 1 or " + std::to_string(K) + " entries, got " +
                                       std::to_string(z.size()));
  for (std::size_t i = 0; i < K; ++i) {
    const std::string name = "z" + std::to_string(i + 1);
    check_interval(name.c_str(), out[i], 0.0, 1.0, module);
  }
  return out;
}

}  // namespace detail

inline double branin_runtime(double z1, double runtime_scale) {
  return runtime_scale * (0.05 + 0.95 * std::pow(z1, 1.5));
}

/// f_z(x1, x2) with b, c, t replaced by their fidelity-shifted versions.
inline QueryResult branin(double x1, double x2, std::span<const double> z, const MfBraninParams& p = {}) {
  detail::check_interval("x1", x1, -5.0, 10.0, "benchmarks");
  detail::check_interval("x2", x2, 0.0, 15.0, "benchmarks");
  if (!(p.runtime_scale > 0.0)) throw validation_error("benchmarks", "runtime scale C must be positive");
  const auto zz = detail::expand_fidelity<kBraninFidelityDim>(z, "benchmarks");
  const double b = p.b - p.delta_b * (1.0 - zz[0]);
  const double c = p.c - p.delta_c * (1.0 - zz[1]);
  const double t = p.t + p.delta_t * (1.0 - zz[2]);
  const double inner = x2 - b * x1 * x1 + c * x1 - p.r;
  const double f = p.a * inner * inner + p.s * (1.0 - t) * std::cos(x1) + p.s;
  const double tau = branin_runtime(zz[0], p.runtime_scale);
  return QueryResult{{{"loss", f}, {"runtime", tau}}, tau};
}

inline QueryResult branin(double x1, double x2, double z, const MfBraninParams& p = {}) {
  return branin(x1, x2, std::span<const double>(&z, 1), p);
}

// ---------------------------------------------------------------------------
// Multi-fidelity Hartmann (3D and 6D)
// ---------------------------------------------------------------------------

inline constexpr std::size_t kHartmannFidelityDim = 4;

struct MfHartmannParams {
  int dim = 3;
  std::array<double, 4> alpha{1.0, 1.2, 3.0, 3.2};
  std::vector<std::array<double, 6>> A;  // 4 rows, first dim columns used
  std::vector<std::array<double, 6>> P;
  double delta = 0.1;
  double runtime_scale = 3600.0;

  static MfHartmannParams three(double runtime_scale = 3600.0) {
    MfHartmannParams p;
    p.dim = 3;
    p.runtime_scale = runtime_scale;
    p.A = {{3.0, 10.0, 30.0}, {0.1, 10.0, 35.0}, {3.0, 10.0, 30.0}, {0.1, 10.0, 35.0}};
    p.P = {{0.3689, 0.1170, 0.2673}, {0.4699, 0.4387, 0.7470}, {0.1091, 0.8732, 0.5547}, {0.0381, 0.5743, 0.8828}};
    return p;
  }

  static MfHartmannParams six(double runtime_scale = 3600.0) {
    MfHartmannParams p;
    p.dim = 6;
    p.runtime_scale = runtime_scale;
    p.A = {{10.0, 3.0, 17.0, 3.5, 1.7, 8.0},
           {0.05, 10.0, 17.0, 0.1, 8.0, 14.0},
           {3.0, 3.5, 1.7, 10.0, 17.0, 8.0},
           {17.0, 8.0, 0.05, 10.0, 0.1, 14.0}};
    p.P = {{0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886},
           {0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991},
           {0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650},
           {0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381}};
    return p;
  }
};

inline double hartmann_runtime(std::span<const double, kHartmannFidelityDim> z, int dim, double runtime_scale) {
  const double share = dim == 3 ? (z[0] + z[1] * z[1] * z[1] + z[2] * z[3]) / 3.0
                                : (z[0] + z[1] * z[1] + z[2] + z[3] * z[3] * z[3]) / 4.0;
  return runtime_scale * (0.1 + 0.9 * share);
}

/// f_z(x) = -sum_i alpha_z,i exp(-sum_j A_ij (x_j - P_ij)^2), with
/// alpha_z = alpha - delta (1 - z) so that z = 1 recovers the classic function.
inline QueryResult hartmann(std::span<const double> x, std::span<const double> z, const MfHartmannParams& p) {
  if (p.dim != 3 && p.dim != 6) throw validation_error("benchmarks", "Hartmann dimension must be 3 or 6");
  if (p.A.size() != 4 || p.P.size() != 4) throw validation_error("benchmarks", "Hartmann A and P must have 4 rows");
  if (!(p.runtime_scale > 0.0)) throw validation_error("benchmarks", "runtime scale C must be positive");
  if (x.size() != static_cast<std::size_t>(p.dim))
    throw validation_error("benchmarks", "Hartmann-" + std::to_string(p.dim) + "D expects " + std::to_string(p.dim) +
                                             " coordinates, got " + std::to_string(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) {
    const std::string name = "x" + std::to_string(j + 1);
    detail::check_interval(name.c_str(), x[j], 0.0, 1.0, "benchmarks");
  }
  const auto zz = detail::expand_fidelity<kHartmannFidelityDim>(z, "benchmarks");

  double f = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double alpha = p.alpha[i] - p.delta * (1.0 - zz[i]);
    double exponent = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - p.P[i][j];
      exponent += p.A[i][j] * d * d;
    }
    f -= alpha * std::exp(-exponent);
  }
  const double tau = hartmann_runtime(zz, p.dim, p.runtime_scale);
  return QueryResult{{{"loss", f}, {"runtime", tau}}, tau};
}

// ---------------------------------------------------------------------------
// Benchmark adapters
// ---------------------------------------------------------------------------

/// How named fidelity arguments map onto z in [0, 1]^K: value v becomes
/// v / upper. One key is replicated over every coordinate, K keys map one to
/// one, no keys means full fidelity.
struct FidelityMapping {
  std::vector<std::string> keys;
  double lower = 0.0;
  double upper = 1.0;
  bool integer = false;

  std::vector<DimensionSpec> specs() const {
    std::vector<DimensionSpec> out;
    for (const auto& key : keys) {
      if (integer)
        out.push_back(DimensionSpec::integer(key, static_cast<std::int64_t>(lower), static_cast<std::int64_t>(upper)));
      else
        out.push_back(DimensionSpec::continuous(key, lower, upper));
    }
    return out;
  }

  std::vector<double> to_z(const QueryArgs& args, std::size_t k, const std::string& who) const {
    if (keys.empty()) return {1.0};
    if (keys.size() != 1 && keys.size() != k)
      throw validation_error("benchmarks", who + " takes 1 or " + std::to_string(k) + " fidelity keys");
    if (!args.fidels) throw validation_error("benchmarks", who + " query is missing fidelities");
    std::vector<double> z;
    for (const auto& key : keys) {
      const auto it = args.fidels->find(key);
      if (it == args.fidels->end()) throw validation_error("benchmarks", "missing fidelity key '" + key + "'");
      if (!(lower <= it->second && it->second <= upper))
        throw validation_error("benchmarks", "fidelity " + key + "=" + format_number(it->second) + " is outside [" +
                                                 format_number(lower) + ", " + format_number(upper) + "]");
      z.push_back(it->second / upper);
    }
    return z;
  }
};

class MfBraninBenchmark final : public Benchmark {
 public:
  explicit MfBraninBenchmark(MfBraninParams params = {}, FidelityMapping fidelity = {})
      : params_(params),
        fidelity_(std::move(fidelity)),
        specs_(fidelity_.specs()),
        space_({DimensionSpec::continuous("x1", -5.0, 10.0), DimensionSpec::continuous("x2", 0.0, 15.0)},
               "mf-branin") {}

  std::string name() const override { return "mf-branin"; }
  const SearchSpace& space() const override { return space_; }
  std::span<const DimensionSpec> fidelities() const override { return specs_; }

  Metrics evaluate(const ConfigPoint& config, const QueryArgs& args, Rng&) const override {
    const auto z = fidelity_.to_z(args, kBraninFidelityDim, name());
    return branin(config.number("x1"), config.number("x2"), z, params_).objectives;
  }

 private:
  MfBraninParams params_;
  FidelityMapping fidelity_;
  std::vector<DimensionSpec> specs_;
  SearchSpace space_;
};

class MfHartmannBenchmark final : public Benchmark {
 public:
  explicit MfHartmannBenchmark(MfHartmannParams params, FidelityMapping fidelity = {})
      : params_(std::move(params)), fidelity_(std::move(fidelity)), specs_(fidelity_.specs()) {
    std::vector<DimensionSpec> dims;
    for (int j = 1; j <= params_.dim; ++j) dims.push_back(DimensionSpec::continuous("x" + std::to_string(j), 0.0, 1.0));
    space_ = SearchSpace(std::move(dims), name());
  }

  std::string name() const override { return "mf-hartmann-" + std::to_string(params_.dim) + "d"; }
  const SearchSpace& space() const override { return space_; }
  std::span<const DimensionSpec> fidelities() const override { return specs_; }

  Metrics evaluate(const ConfigPoint& config, const QueryArgs& args, Rng&) const override {
    std::vector<double> x;
    for (int j = 1; j <= params_.dim; ++j) x.push_back(config.number("x" + std::to_string(j)));
    const auto z = fidelity_.to_z(args, kHartmannFidelityDim, name());
    return hartmann(x, z, params_).objectives;
  }

 private:
  MfHartmannParams params_;
  FidelityMapping fidelity_;
  std::vector<DimensionSpec> specs_;
  SearchSpace space_;
};

/// Echoes its configuration: runtime = config["runtime"], loss = config["id"].
/// Lets tests and external drivers script exact runtime schedules.
class ScriptedBenchmark final : public Benchmark {
 public:
  ScriptedBenchmark()
      : space_({DimensionSpec::integer("id", 0, 1'000'000'000), DimensionSpec::continuous("runtime", 0.0, 1e12)},
               "scripted") {}

  std::string name() const override { return "scripted"; }
  const SearchSpace& space() const override { return space_; }
  std::span<const DimensionSpec> fidelities() const override { return {}; }

  Metrics evaluate(const ConfigPoint& config, const QueryArgs&, Rng&) const override {
    return {{"loss", config.number("id")}, {"runtime", config.number("runtime")}};
  }

 private:
  SearchSpace space_;
};

}  // namespace mfsim
