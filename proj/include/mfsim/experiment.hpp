#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "mfsim/benchmarks.hpp"
#include "mfsim/io.hpp"
#include "mfsim/naive.hpp"
#include "mfsim/optimizers.hpp"
#include "mfsim/sim_core.hpp"
#include "mfsim/sync_store.hpp"
#include "mfsim/tabular.hpp"

// Experiment runner: manifest parsing, the three execution modes, the stdio
// worker bridge and the plot-data emitter.

namespace mfsim {

enum class RunMode { ask_and_tell, multi_worker, naive };

inline RunMode run_mode_from(const std::string& text) {
  if (text == "ask-and-tell") return RunMode::ask_and_tell;
  if (text == "multi-worker") return RunMode::multi_worker;
  if (text == "naive") return RunMode::naive;
  throw validation_error("cli", "unknown mode '" + text + "' (expected ask-and-tell, multi-worker or naive)");
}

inline const char* to_string(RunMode mode) {
  switch (mode) {
    case RunMode::ask_and_tell: return "ask-and-tell";
    case RunMode::multi_worker: return "multi-worker";
    case RunMode::naive: return "naive";
  }
  return "?";
}

struct BenchmarkSpec {
  std::string name = "branin";  // branin | hartmann3 | hartmann6 | tabular | scripted
  double runtime_scale = 3600.0;
  double fidelity_lower = 1.0;
  double fidelity_upper = 1.0;
  bool fidelity_integer = false;
  std::filesystem::path descriptor;  // tabular only
  std::filesystem::path data;
};

struct OptimizerSpec {
  std::string name = "random_search";  // random_search | asha
  FidelityChoice fidelity = FidelityChoice::max;
  int eta = 3;
  std::optional<double> min_fidelity;
  std::optional<double> max_fidelity;
  std::size_t brackets = 1;
};

struct ExperimentManifest {
  RunMode mode = RunMode::ask_and_tell;
  std::filesystem::path output_dir = "out";
  BenchmarkSpec benchmark;
  OptimizerSpec optimizer;
  ExperimentSettings settings;
  std::optional<double> sampling_latency;  // nullopt: measured
  double naive_time_scale = 1.0 / 3600.0;

  SamplingLatency latency() const {
    return sampling_latency ? SamplingLatency::constant(*sampling_latency) : SamplingLatency::measured();
  }

  std::filesystem::path save_dir() const { return output_dir / kStoreRoot / settings.save_dir_name; }
};

/// Relative paths resolve against base_dir (the manifest's directory).
inline ExperimentManifest manifest_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  static const std::set<std::string> kKnown = {"mode",     "output_dir",       "benchmark",       "optimizer",
                                               "settings", "sampling_latency", "naive_time_scale"};
  if (!j.is_object()) throw validation_error("cli", "manifest must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kKnown.contains(key)) throw validation_error("cli", "unknown manifest field '" + key + "'");
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };

  ExperimentManifest m;
  try {
    if (j.contains("mode")) m.mode = run_mode_from(j.at("mode").get<std::string>());
    if (j.contains("output_dir")) m.output_dir = resolve(j.at("output_dir").get<std::string>());
    m.settings = settings_from_json(j.value("settings", Json::object()));

    const auto b = j.value("benchmark", Json::object());
    m.benchmark.name = b.value("name", m.benchmark.name);
    if (b.contains("runtime_scale")) m.benchmark.runtime_scale = json_number(b.at("runtime_scale"), "runtime_scale");
    if (b.contains("fidelity")) {
      const auto& f = b.at("fidelity");
      m.benchmark.fidelity_lower = json_number(require(f, "lower", "fidelity"), "lower");
      m.benchmark.fidelity_upper = json_number(require(f, "upper", "fidelity"), "upper");
      m.benchmark.fidelity_integer = f.value("integer", false);
    }
    if (b.contains("descriptor")) m.benchmark.descriptor = resolve(b.at("descriptor").get<std::string>());
    if (b.contains("data")) m.benchmark.data = resolve(b.at("data").get<std::string>());

    const auto o = j.value("optimizer", Json::object());
    m.optimizer.name = o.value("name", m.optimizer.name);
    if (o.contains("fidelity")) {
      const auto choice = o.at("fidelity").get<std::string>();
      if (choice == "max") m.optimizer.fidelity = FidelityChoice::max;
      else if (choice == "uniform") m.optimizer.fidelity = FidelityChoice::uniform;
      else throw validation_error("cli", "optimizer.fidelity must be 'max' or 'uniform'");
    }
    if (o.contains("eta")) m.optimizer.eta = o.at("eta").get<int>();
    if (o.contains("min_fidelity")) m.optimizer.min_fidelity = json_number(o.at("min_fidelity"), "min_fidelity");
    if (o.contains("max_fidelity")) m.optimizer.max_fidelity = json_number(o.at("max_fidelity"), "max_fidelity");
    if (o.contains("brackets")) m.optimizer.brackets = o.at("brackets").get<std::size_t>();

    if (j.contains("sampling_latency")) {
      const auto& l = j.at("sampling_latency");
      if (!(l.is_string() && l.get<std::string>() == "measured"))
        m.sampling_latency = json_number(l, "sampling_latency");
    }
    if (j.contains("naive_time_scale")) m.naive_time_scale = json_number(j.at("naive_time_scale"), "naive_time_scale");
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("cli", std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline ExperimentManifest load_manifest(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path, "cli"));
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("cli", path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline std::unique_ptr<Benchmark> make_benchmark(const ExperimentManifest& m) {
  const auto& b = m.benchmark;
  const FidelityMapping mapping{m.settings.fidel_keys, b.fidelity_lower, b.fidelity_upper, b.fidelity_integer};
  if (b.name == "branin" || b.name == "hartmann3" || b.name == "hartmann6") {
    if (!(b.runtime_scale > 0.0)) throw validation_error("cli", "benchmark.runtime_scale must be positive");
    if (!mapping.keys.empty() && !(0.0 <= b.fidelity_lower && b.fidelity_lower <= b.fidelity_upper && b.fidelity_upper > 0.0))
      throw validation_error("cli", "benchmark.fidelity must satisfy 0 <= lower <= upper, upper > 0");
  }
  if (b.name == "branin") {
    MfBraninParams params;
    params.runtime_scale = b.runtime_scale;
    return std::make_unique<MfBraninBenchmark>(params, mapping);
  }
  if (b.name == "hartmann3") return std::make_unique<MfHartmannBenchmark>(MfHartmannParams::three(b.runtime_scale), mapping);
  if (b.name == "hartmann6") return std::make_unique<MfHartmannBenchmark>(MfHartmannParams::six(b.runtime_scale), mapping);
  if (b.name == "scripted") {
    if (m.settings.has_fidelities()) throw validation_error("cli", "the scripted benchmark takes no fidelities");
    return std::make_unique<ScriptedBenchmark>();
  }
  if (b.name == "tabular") {
    if (b.descriptor.empty() || b.data.empty())
      throw validation_error("cli", "tabular benchmark needs 'descriptor' and 'data' files");
    for (const auto& path : {b.descriptor, b.data})
      if (!std::filesystem::exists(path)) throw validation_error("cli", "file not found: " + path.string());
    auto table = std::make_shared<const TabularTable>(load_tabular(b.descriptor, b.data, m.settings.runtime_key));
    std::vector<std::string> names;
    for (const auto& f : table->descriptor().fidelities) names.push_back(f.name);
    std::vector<std::string> keys = m.settings.fidel_keys;
    std::sort(names.begin(), names.end());
    std::sort(keys.begin(), keys.end());
    if (names != keys) throw validation_error("cli", "settings.fidel_keys must name exactly the descriptor's fidelities");
    return std::make_unique<TabularBenchmark>(std::move(table));
  }
  throw validation_error("cli", "unknown benchmark '" + b.name + "'");
}

inline std::unique_ptr<Policy> make_policy(const ExperimentManifest& m, const Benchmark& benchmark) {
  const std::uint64_t seed = m.settings.seed.value_or(0);
  const auto fidelities = benchmark.fidelities();
  if (m.optimizer.name == "random_search")
    return std::make_unique<RandomSearch>(benchmark.space(), std::vector<DimensionSpec>(fidelities.begin(), fidelities.end()),
                                          seed, m.optimizer.fidelity);
  if (m.optimizer.name == "asha") {
    if (fidelities.size() != 1) throw validation_error("cli", "asha needs exactly one fidelity parameter");
    const auto& spec = fidelities.front();
    double lower = 0.0;
    double upper = spec.upper_bound();
    bool integer = false;
    if (const auto* r = std::get_if<IntegerRange>(&spec.domain)) {
      lower = static_cast<double>(r->lower);
      integer = true;
    } else if (const auto* c = std::get_if<ContinuousRange>(&spec.domain)) {
      lower = c->lower;
    } else if (const auto* g = std::get_if<OrdinalGrid>(&spec.domain)) {
      lower = *std::min_element(g->grid.begin(), g->grid.end());
      integer = std::all_of(g->grid.begin(), g->grid.end(), [](double v) { return v == std::round(v); });
    }
    HyperbandSchedule schedule(m.optimizer.eta, m.optimizer.min_fidelity.value_or(std::max(lower, 1e-12)),
                               m.optimizer.max_fidelity.value_or(upper), integer);
    for (const double rung : schedule.rungs())
      if (!spec.contains(rung))
        throw validation_error("cli", "ASHA rung " + format_number(rung) + " is not a valid value of '" + spec.name + "'");
    AshaOptions options{spec.name, m.settings.obj_keys.front(), m.optimizer.brackets};
    return std::make_unique<Asha>(benchmark.space(), std::move(schedule), std::move(options), seed);
  }
  throw validation_error("cli", "unknown optimizer '" + m.optimizer.name + "'");
}

/// Full pre-flight check: settings, files, benchmark and optimizer.
inline void validate_manifest(const ExperimentManifest& m) {
  validate_settings(m.settings);
  if (m.sampling_latency) SamplingLatency::constant(*m.sampling_latency);
  if (!(m.naive_time_scale > 0.0)) throw validation_error("cli", "naive_time_scale must be positive");
  const auto benchmark = make_benchmark(m);
  make_policy(m, *benchmark);
}

// ---------------------------------------------------------------------------
// Result files
// ---------------------------------------------------------------------------

/// Reads the {index, wall_time} sidecar; missing entries stay NaN.
inline std::vector<double> load_wall_times(const std::filesystem::path& path) {
  std::vector<double> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_text_file(path, "cli"));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = Json::parse(line);
      const auto index = j.at("index").get<std::size_t>();
      if (index == 0) throw validation_error("cli", "index must be positive");
      if (out.size() < index) out.resize(index, std::numeric_limits<double>::quiet_NaN());
      out[index - 1] = json_number(j.at("wall_time"), "wall_time");
    } catch (const std::exception& e) {
      throw runtime_error("cli", "corrupt wall-time file " + path.string() + " at line " + std::to_string(line_no) +
                                     ": " + e.what());
    }
  }
  return out;
}

/// CSV of (simulated_time, wall_time, worker_index, best_so_far), one row per
/// delivered record; best_so_far is the running minimum of objective_key.
inline void emit_plot_data(const std::vector<ObservationRecord>& records, std::ostream& out,
                           const std::string& objective_key = "loss", const std::vector<double>& wall_times = {}) {
  out << "simulated_time,wall_time,worker_index,best_so_far\n";
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : records) {
    const auto it = r.objectives.find(objective_key);
    if (it == r.objectives.end())
      throw runtime_error("cli", "record " + std::to_string(r.index) + " has no objective '" + objective_key + "'");
    if (it->second < best) best = it->second;
    out << format_number(r.finish_time) << ',';
    if (r.index >= 1 && r.index <= wall_times.size() && !std::isnan(wall_times[r.index - 1]))
      out << format_number(wall_times[r.index - 1]);
    out << ',' << r.worker << ',' << format_number(best) << '\n';
  }
}

struct RunSummary {
  RunMode mode = RunMode::ask_and_tell;
  std::size_t n_records = 0;
  double final_simulated_time = 0.0;
  double wall_clock_seconds = 0.0;
  std::map<std::string, double, std::less<>> best;  // per objective key
  std::filesystem::path save_dir;
};

inline Json to_json(const RunSummary& s) {
  Json best = Json::object();
  for (const auto& [key, value] : s.best) best[key] = number_json(value);
  return Json{{"mode", to_string(s.mode)},
              {"n_records", s.n_records},
              {"final_simulated_time", number_json(s.final_simulated_time)},
              {"wall_clock_seconds", s.wall_clock_seconds},
              {"best_objective", std::move(best)}};
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw runtime_error("cli", "cannot write " + path.string());
  out << text;
  if (!out) throw runtime_error("cli", "write failed on " + path.string());
}

inline void write_log(const std::filesystem::path& dir, const std::vector<ObservationRecord>& records,
                      const std::vector<double>& wall_times, const ExperimentSettings& settings) {
  auto order = settings.obj_keys;
  order.push_back(settings.runtime_key);
  std::string results;
  std::string walls;
  for (const auto& r : records) {
    results += to_json(r, settings.store_config, order).dump() + '\n';
    walls += Json{{"index", r.index}, {"wall_time", wall_times.at(r.index - 1)}}.dump() + '\n';
  }
  write_text(dir / "results", results);
  write_text(dir / "wall_times", walls);
}

[[noreturn]] inline void child_exit(int code) {
  std::fflush(stdout);
  std::fflush(stderr);
  ::_exit(code);
}

inline int exit_code(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::validation: return 2;
    case Error::Kind::runtime: return 3;
    case Error::Kind::protocol: return 4;
  }
  return 3;
}

// One multi-worker child: register, then loop ask -> query -> submit.
inline void worker_process(const ExperimentManifest& m, int ready_fd) {
  const auto benchmark = make_benchmark(m);
  const auto policy = make_policy(m, *benchmark);
  const BenchmarkObjective objective(*benchmark, m.settings);
  auto store = Store::open(m.output_dir, m.settings);
  const WorkerIndex p = store.register_worker();
  const char byte = 1;
  if (::write(ready_fd, &byte, 1) != 1) throw runtime_error("cli", "cannot signal registration");
  ::close(ready_fd);

  const auto latency = m.latency();
  using Clock = std::chrono::steady_clock;
  for (;;) {
    if (store.wait_for_turn(p) != TurnStatus::ready) break;
    const auto begin = Clock::now();
    std::optional<Suggestion> suggestion;
    std::size_t ask_number = 0;
    store.with_exclusive_lock([&] {
      const auto table = store.load_table();
      if (table.finished || table.poisoned) return;
      if (table.submitted >= m.settings.n_actual_evals_in_opt)
        throw runtime_error("sim-core", "optimizer asked more than n_actual_evals_in_opt (" +
                                            std::to_string(m.settings.n_actual_evals_in_opt) + ") times");
      policy->load_state(*store.load_policy_state());
      suggestion = policy->ask();
      store.save_policy_state(policy->save_state());
      ask_number = table.submitted;
    });
    if (!suggestion) break;
    const auto result = objective(suggestion->config, suggestion->args, ask_number);
    const double t = latency.resolve(std::chrono::duration<double>(Clock::now() - begin).count());
    const auto delivery = store.submit_and_wait(p, suggestion->config, suggestion->args, result, t,
                                                [&](const ObservationRecord& record) {
                                                  policy->load_state(*store.load_policy_state());
                                                  policy->tell(record);
                                                  store.save_policy_state(policy->save_state());
                                                });
    if (delivery.status != DeliveryStatus::delivered) break;
  }
  store.retire(p);
}

}  // namespace detail

/// Runs one experiment end to end and writes results, wall_times,
/// summary.json and plot_data.csv into the save directory.
inline RunSummary run_experiment(const ExperimentManifest& m, bool overwrite = false) {
  using Clock = std::chrono::steady_clock;
  validate_manifest(m);
  const auto dir = m.save_dir();
  if (std::filesystem::exists(dir)) {
    if (!overwrite) throw validation_error("cli", dir.string() + " already exists; pass --overwrite to replace it");
    std::filesystem::remove_all(dir);
  }

  const auto benchmark = make_benchmark(m);
  const auto policy = make_policy(m, *benchmark);
  const BenchmarkObjective objective(*benchmark, m.settings);
  const auto start = Clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };
  std::vector<ObservationRecord> records;

  if (m.mode == RunMode::ask_and_tell || m.mode == RunMode::naive) {
    std::filesystem::create_directories(dir);
    std::vector<double> walls;
    SimulationReport report;
    if (m.mode == RunMode::ask_and_tell) {
      report = simulate_ask_and_tell(*policy, objective, m.settings, m.latency(),
                                     [&](const ObservationRecord&) { walls.push_back(elapsed()); });
    } else {
      report = simulate_naive(*policy, objective, m.settings, m.naive_time_scale);
      for (const auto& r : report.records) walls.push_back(r.finish_time * m.naive_time_scale);
    }
    records = std::move(report.records);
    detail::write_log(dir, records, walls, m.settings);
  } else {
    {
      auto store = Store::open(m.output_dir, m.settings);
      store.with_exclusive_lock([&] { store.save_policy_state(policy->save_state()); });
    }
    std::fflush(stdout);
    std::fflush(stderr);
    std::vector<pid_t> children;
    for (std::size_t k = 0; k < m.settings.n_workers; ++k) {
      int fds[2];
      if (::pipe(fds) != 0) throw runtime_error("cli", "pipe failed");
      const pid_t pid = ::fork();
      if (pid < 0) throw runtime_error("cli", "fork failed");
      if (pid == 0) {
        ::close(fds[0]);
        try {
          detail::worker_process(m, fds[1]);
        } catch (const Error& e) {
          std::cerr << "worker: " << e.what() << '\n';
          detail::child_exit(detail::exit_code(e));
        } catch (const std::exception& e) {
          std::cerr << "worker: " << e.what() << '\n';
          detail::child_exit(3);
        }
        detail::child_exit(0);
      }
      ::close(fds[1]);
      char byte = 0;
      // Registration happens one child at a time so worker indices are stable.
      while (::read(fds[0], &byte, 1) < 0 && errno == EINTR) {
      }
      ::close(fds[0]);
      children.push_back(pid);
    }
    int worst = 0;
    for (const pid_t pid : children) {
      int status = 0;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 3;
      worst = std::max(worst, code);
    }
    if (worst != 0) {
      if (worst == 2) throw validation_error("cli", "a worker process failed validation");
      if (worst == 4) throw protocol_error("cli", "a worker process hit a protocol error");
      throw runtime_error("cli", "a worker process failed");
    }
    records = load_results_file(dir / "results");
  }

  RunSummary summary;
  summary.mode = m.mode;
  summary.n_records = records.size();
  summary.wall_clock_seconds = elapsed();
  summary.save_dir = dir;
  for (const auto& key : m.settings.obj_keys) summary.best[key] = std::numeric_limits<double>::infinity();
  for (const auto& r : records) {
    summary.final_simulated_time = std::max(summary.final_simulated_time, r.finish_time);
    for (auto& [key, best] : summary.best) {
      const auto it = r.objectives.find(key);
      if (it != r.objectives.end() && it->second < best) best = it->second;
    }
  }
  detail::write_text(dir / "summary.json", to_json(summary).dump(2) + '\n');
  std::ostringstream plot;
  emit_plot_data(records, plot, m.settings.obj_keys.front(), load_wall_times(dir / "wall_times"));
  detail::write_text(dir / "plot_data.csv", plot.str());
  return summary;
}

// ---------------------------------------------------------------------------
// Stdio worker bridge
// ---------------------------------------------------------------------------

namespace detail {

inline const char* kind_name(Error::Kind kind) {
  switch (kind) {
    case Error::Kind::validation: return "validation";
    case Error::Kind::runtime: return "runtime";
    case Error::Kind::protocol: return "protocol";
  }
  return "runtime";
}

inline Json error_response(const std::string& kind, const std::string& message) {
  return Json{{"ok", false}, {"error", Json{{"kind", kind}, {"message", message}}}};
}

}  // namespace detail

/// Newline-delimited JSON session on (in, out). Each request is one object:
///   {"config": {...}, "fidels": {...}, "seed": n}   evaluate and deliver
///   {"op": "register"}                              claim a worker slot now
///   {"op": "retire"}                                leave and end the session
/// End of input retires the worker. Returns the process exit code.
inline int serve_worker(Store& store, const Benchmark& benchmark, const ExperimentSettings& settings, std::istream& in,
                        std::ostream& out, SamplingLatency latency = SamplingLatency::measured()) {
  using Clock = std::chrono::steady_clock;
  const BenchmarkObjective objective(benchmark, settings);
  std::optional<WorkerIndex> worker;
  auto last_reply = Clock::now();
  const auto reply = [&](const Json& j) {
    out << j.dump() << '\n';
    out.flush();
    last_reply = Clock::now();
  };
  const auto ensure_registered = [&] {
    if (!worker) worker = store.register_worker();
    return *worker;
  };

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const double elapsed = std::chrono::duration<double>(Clock::now() - last_reply).count();
    try {
      Json request;
      try {
        request = Json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw protocol_error("cli", std::string("malformed request: ") + e.what());
      }
      if (!request.is_object()) throw protocol_error("cli", "request must be a JSON object");
      const std::string op = request.value("op", std::string("query"));
      if (op == "register") {
        reply(Json{{"ok", true}, {"status", "registered"}, {"worker_index", ensure_registered()}});
        continue;
      }
      if (op == "retire") {
        if (worker) store.retire(*worker);
        reply(Json{{"ok", true}, {"status", "retired"}});
        return 0;
      }
      if (op != "query") throw protocol_error("cli", "unknown op '" + op + "'");
      if (!request.contains("config")) throw protocol_error("cli", "request has no 'config'");

      QueryArgs args;
      ConfigPoint config;
      try {
        config = config_from_json(request.at("config"));
        if (request.contains("fidels") && !request.at("fidels").is_null())
          args.fidels = fidels_from_json(request.at("fidels"));
        if (request.contains("seed") && !request.at("seed").is_null()) args.seed = json_seed(request.at("seed"), "seed");
      } catch (const nlohmann::json::exception& e) {
        throw protocol_error("cli", std::string("malformed request: ") + e.what());
      }
      const WorkerIndex p = ensure_registered();
      const auto ask_number = store.read_runtime_table().submitted;
      const auto result = objective(config, args, ask_number);
      const auto delivery = store.submit_and_wait(p, config, args, result, latency.resolve(elapsed));

      Json response{{"ok", true}, {"worker_index", p}};
      switch (delivery.status) {
        case DeliveryStatus::delivered: response["status"] = "delivered"; break;
        case DeliveryStatus::budget_exhausted: response["status"] = "budget_exhausted"; break;
        case DeliveryStatus::timed_out: response["status"] = "timed_out"; break;
      }
      if (delivery.status == DeliveryStatus::budget_exhausted) {
        response["objectives"] = nullptr;
        response["delivery_index"] = nullptr;
      } else {
        auto order = settings.obj_keys;
        order.push_back(settings.runtime_key);
        response["objectives"] = objectives_json(delivery.record.objectives, order);
        response["delivery_index"] = delivery.status == DeliveryStatus::delivered ? Json(delivery.record.index) : Json(nullptr);
        response["simulated_time"] = number_json(delivery.record.finish_time);
      }
      reply(response);
    } catch (const StorePoisonedError& e) {
      reply(detail::error_response("runtime", e.what()));
      return 3;
    } catch (const Error& e) {
      reply(detail::error_response(detail::kind_name(e.kind()), e.what()));
    } catch (const std::exception& e) {
      reply(detail::error_response("runtime", e.what()));
    }
  }
  if (worker) store.retire(*worker);
  return 0;
}

}  // namespace mfsim
