#pragma once

#include <sys/syscall.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mfsim/core.hpp"
#include "mfsim/file_lock.hpp"
#include "mfsim/io.hpp"
#include "mfsim/sim_core.hpp"

// File-backed shared state that lets P independent threads or processes, each
// evaluating its own objective calls, deliver results in the order the
// simulated clock dictates.
//
// Layout under <base>/mfhpo-simulator-info/<save_dir_name>/:
//   lock             advisory lock file; every transition holds it exclusively
//   worker_registry  JSON: settings fingerprint + identity -> worker index
//   runtime_table    JSON: T_now, T_p per worker, worker status, counters
//   state_cache      JSON: config key -> list of restart checkpoints
//   results          newline-delimited JSON records, append-only
//   wall_times       newline-delimited {index, wall_time} sidecar
//   policy_state     optional JSON blob for optimizers shared across processes

namespace mfsim {

namespace fs = std::filesystem;

inline constexpr const char* kStoreRoot = "mfhpo-simulator-info";

enum class WorkerStatus { vacant, sampling, pending, retired };

inline const char* to_string(WorkerStatus status) {
  switch (status) {
    case WorkerStatus::vacant: return "vacant";
    case WorkerStatus::sampling: return "sampling";
    case WorkerStatus::pending: return "pending";
    case WorkerStatus::retired: return "retired";
  }
  return "?";
}

inline WorkerStatus worker_status_from(const std::string& text) {
  if (text == "vacant") return WorkerStatus::vacant;
  if (text == "sampling") return WorkerStatus::sampling;
  if (text == "pending") return WorkerStatus::pending;
  if (text == "retired") return WorkerStatus::retired;
  throw runtime_error("sync-store", "unknown worker status '" + text + "'");
}

/// Shared clock state: T_now, every T_p, and who is doing what.
struct RuntimeTable {
  std::uint64_t version = 0;  // bumped on every transition
  double now = 0.0;
  std::size_t submitted = 0;
  std::size_t delivered = 0;
  bool finished = false;  // n_evals results delivered
  bool poisoned = false;  // a worker timed out; ordering can no longer be trusted
  std::vector<double> times;
  std::vector<WorkerStatus> status;

  SimClock clock() const {
    SimClock clock(times.size());
    clock.worker_times = times;
    clock.now = now;
    clock.observations = submitted;
    return clock;
  }

  /// The non-retired worker with the smallest (T_p, p), or 0 if all retired.
  /// Idle and not-yet-registered workers count with their current T_p, so a
  /// worker that is still sampling holds back everyone behind it.
  WorkerIndex next_to_act() const {
    WorkerIndex best = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (status[i] == WorkerStatus::retired) continue;
      if (best == 0 || times[i] < times[best - 1]) best = i + 1;
    }
    return best;
  }
};

inline Json to_json(const RuntimeTable& t) {
  Json workers = Json::array();
  for (std::size_t i = 0; i < t.times.size(); ++i)
    workers.push_back(Json{{"time", t.times[i]}, {"status", to_string(t.status[i])}});
  return Json{{"version", t.version},     {"now", t.now},           {"submitted", t.submitted},
              {"delivered", t.delivered}, {"finished", t.finished}, {"poisoned", t.poisoned},
              {"workers", std::move(workers)}};
}

inline RuntimeTable runtime_table_from_json(const Json& j) {
  RuntimeTable t;
  t.version = j.at("version").get<std::uint64_t>();
  t.now = j.at("now").get<double>();
  t.submitted = j.at("submitted").get<std::size_t>();
  t.delivered = j.at("delivered").get<std::size_t>();
  t.finished = j.at("finished").get<bool>();
  t.poisoned = j.at("poisoned").get<bool>();
  for (const auto& w : j.at("workers")) {
    t.times.push_back(w.at("time").get<double>());
    t.status.push_back(worker_status_from(w.at("status").get<std::string>()));
  }
  return t;
}

inline Json to_json(const StateCache& cache) {
  Json states = Json::object();
  for (const auto& [key, list] : cache.entries()) {
    Json arr = Json::array();
    for (const auto& s : list) {
      Json item{{"runtime_spent", s.runtime_spent}, {"completion_time", s.completion_time}};
      if (s.args.fidels) item["fidels"] = to_json(*s.args.fidels);
      if (s.args.seed) item["seed"] = *s.args.seed;
      arr.push_back(std::move(item));
    }
    states[key] = std::move(arr);
  }
  return Json{{"states", std::move(states)}};
}

inline StateCache state_cache_from_json(const Json& j) {
  StateCache::Map map;
  for (const auto& [key, list] : j.at("states").items()) {
    auto& out = map[key];
    for (const auto& item : list) {
      IntermediateState s;
      s.runtime_spent = item.at("runtime_spent").get<double>();
      s.completion_time = item.at("completion_time").get<double>();
      if (item.contains("fidels")) s.args.fidels = fidels_from_json(item.at("fidels"));
      if (item.contains("seed")) s.args.seed = json_seed(item.at("seed"), "seed");
      out.push_back(std::move(s));
    }
  }
  return StateCache(std::move(map));
}

/// Identity of the calling thread: "<pid>:<tid>".
inline std::string runtime_identity() {
  return std::to_string(::getpid()) + ":" + std::to_string(static_cast<long>(::syscall(SYS_gettid)));
}

/// Parses a newline-delimited results file. An unterminated last line is a
/// write in progress and is ignored; any other malformed line is an error
/// naming the file and line.
inline std::vector<ObservationRecord> parse_results(const std::string& text, const fs::path& path) {
  std::vector<ObservationRecord> out;
  std::size_t begin = 0;
  std::size_t line_no = 0;
  while (begin < text.size()) {
    const auto end = text.find('\n', begin);
    if (end == std::string::npos) break;
    ++line_no;
    const std::string_view line(text.data() + begin, end - begin);
    begin = end + 1;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      throw runtime_error("sync-store", "corrupt results file " + path.string() + " at line " +
                                            std::to_string(line_no) + ": " + e.what());
    }
    if (out.back().index != out.size())
      throw runtime_error("sync-store", "corrupt results file " + path.string() + " at line " +
                                            std::to_string(line_no) + ": delivery index " +
                                            std::to_string(out.back().index) + " is not dense");
  }
  return out;
}

inline std::vector<ObservationRecord> load_results_file(const fs::path& path) {
  return parse_results(read_text_file(path, "sync-store"), path);
}

struct StorePaths {
  fs::path dir;
  fs::path lock, registry, runtimes, states, results, wall_times, policy;

  explicit StorePaths(fs::path directory)
      : dir(std::move(directory)),
        lock(dir / "lock"),
        registry(dir / "worker_registry"),
        runtimes(dir / "runtime_table"),
        states(dir / "state_cache"),
        results(dir / "results"),
        wall_times(dir / "wall_times"),
        policy(dir / "policy_state") {}
};

enum class DeliveryStatus { delivered, budget_exhausted, timed_out };

struct Delivery {
  DeliveryStatus status = DeliveryStatus::delivered;
  ObservationRecord record;  // index 0 unless delivered
};

enum class TurnStatus { ready, budget_exhausted, timed_out };

/// Runs under the store lock right after a record is appended.
using DeliveryHook = std::function<void(const ObservationRecord&)>;

/// One handle per thread; handles are cheap and hold no open files.
class Store {
 public:
  /// Creates the store under base, or attaches to a compatible existing one.
  static Store open(const fs::path& base, const ExperimentSettings& settings) {
    validate_settings(settings);
    Store store(StorePaths(base / kStoreRoot / settings.save_dir_name), settings);
    std::error_code ec;
    fs::create_directories(store.paths_.dir, ec);
    if (ec) throw runtime_error("sync-store", "cannot create " + store.paths_.dir.string() + ": " + ec.message());

    FileLock lock(store.paths_.lock, FileLock::Mode::exclusive);
    if (fs::exists(store.paths_.registry)) {
      const auto registry = store.load_json(store.paths_.registry);
      const auto& stored = registry.at("settings");
      if (stored != fingerprint(settings))
        throw validation_error("sync-store", "existing store at " + store.paths_.dir.string() +
                                                 " was created with different settings: " + stored.dump());
      store.created_at_ = registry.at("created_at").get<double>();
      return store;
    }

    store.created_at_ = wall_seconds();
    RuntimeTable table;
    table.times.assign(settings.n_workers, 0.0);
    table.status.assign(settings.n_workers, WorkerStatus::vacant);
    detail::replace_file(store.paths_.results, "");
    detail::replace_file(store.paths_.wall_times, "");
    detail::replace_file(store.paths_.states, to_json(StateCache{}).dump());
    store.save_table(table);
    const Json registry{{"capacity", settings.n_workers},
                        {"created_at", store.created_at_},
                        {"settings", fingerprint(settings)},
                        {"workers", Json::object()}};
    detail::replace_file(store.paths_.registry, registry.dump());
    return store;
  }

  const StorePaths& paths() const noexcept { return paths_; }
  const ExperimentSettings& settings() const noexcept { return settings_; }
  std::optional<WorkerIndex> worker() const noexcept { return worker_; }

  /// First-come-first-served slot assignment, idempotent per thread identity.
  WorkerIndex register_worker() {
    const auto identity = runtime_identity();
    FileLock lock(paths_.lock, FileLock::Mode::exclusive);
    auto registry = load_json(paths_.registry);
    auto& workers = registry.at("workers");
    if (workers.contains(identity)) {
      worker_ = workers.at(identity).get<WorkerIndex>();
      return *worker_;
    }
    if (workers.size() >= settings_.n_workers)
      throw runtime_error("sync-store", "worker pool overflow: more than n_workers=" +
                                            std::to_string(settings_.n_workers) + " workers tried to register");
    const WorkerIndex p = workers.size() + 1;
    workers[identity] = p;
    detail::replace_file(paths_.registry, registry.dump());

    auto table = load_table();
    if (table.status[p - 1] == WorkerStatus::vacant) table.status[p - 1] = WorkerStatus::sampling;
    ++table.version;
    save_table(table);
    worker_ = p;
    return p;
  }

  /// Blocks until worker p is the next to act on the simulated clock, i.e.
  /// may ask its optimizer for a new configuration.
  TurnStatus wait_for_turn(WorkerIndex p) {
    check_worker(p);
    TurnStatus status = TurnStatus::ready;
    poll([&](RuntimeTable& table, bool timed_out) -> bool {
      if (table.finished) return status = TurnStatus::budget_exhausted, true;
      if (table.next_to_act() == p) return status = TurnStatus::ready, true;
      if (timed_out) {
        poison(table);
        return status = TurnStatus::timed_out, true;
      }
      return false;
    });
    return status;
  }

  /// Charges a finished query to worker p, then waits until p is the argmin
  /// worker and delivers it. Returns +inf objectives if nothing changed in the
  /// store for max_waiting_time seconds.
  Delivery submit_and_wait(WorkerIndex p, const ConfigPoint& config, const QueryArgs& args,
                           const QueryResult& result, double sample_latency, const DeliveryHook& on_deliver = {}) {
    check_worker(p);
    if (!std::isfinite(result.runtime))
      throw runtime_error("sync-store", "runtime must be finite, got " + format_number(result.runtime));

    PendingJob job;
    {
      FileLock lock(paths_.lock, FileLock::Mode::exclusive);
      auto table = load_table();
      if (table.poisoned) throw poisoned_error();
      if (table.finished) return Delivery{DeliveryStatus::budget_exhausted, {}};
      if (table.status[p - 1] == WorkerStatus::pending)
        throw runtime_error("sync-store", "worker " + std::to_string(p) + " already has an outstanding job");
      if (table.status[p - 1] == WorkerStatus::retired)
        throw runtime_error("sync-store", "worker " + std::to_string(p) + " has retired");
      if (table.submitted >= settings_.n_actual_evals_in_opt)
        throw runtime_error("sync-store", "more than n_actual_evals_in_opt (" +
                                              std::to_string(settings_.n_actual_evals_in_opt) + ") evaluations submitted");

      RestartCredit restart;
      if (settings_.restart_enabled()) {
        auto cache = load_states();
        const double start = std::max(table.now, table.times[p - 1]) + sample_latency;
        restart = resolve_restart(cache, config, args, start, settings_);
        if (restart.position) {
          cache.remove(config.key(), *restart.position);
          save_states(cache);
        }
      }
      const auto clock = charge_job(table.clock(), p, sample_latency, result.runtime, restart.credit);
      table.now = clock.now;
      table.times = clock.worker_times;
      table.status[p - 1] = WorkerStatus::pending;
      ++table.submitted;
      ++table.version;
      save_table(table);
      job = PendingJob{p, config, args, result, restart.credit, sample_latency, clock.time(p)};
    }

    Delivery out;
    poll([&](RuntimeTable& table, bool timed_out) -> bool {
      if (table.finished) return out.status = DeliveryStatus::budget_exhausted, true;
      if (table.next_to_act() == p) {
        out.status = DeliveryStatus::delivered;
        out.record = deliver(table, job, on_deliver);
        return true;
      }
      if (timed_out) {
        poison(table);
        out.status = DeliveryStatus::timed_out;
        out.record = make_record(job, 0);
        for (auto& [key, value] : out.record.objectives) value = std::numeric_limits<double>::infinity();
        for (const auto& key : settings_.obj_keys) out.record.objectives[key] = std::numeric_limits<double>::infinity();
        return true;
      }
      return false;
    });
    return out;
  }

  /// Removes worker p from the wait set for good.
  void retire(WorkerIndex p) {
    check_worker(p);
    FileLock lock(paths_.lock, FileLock::Mode::exclusive);
    auto table = load_table();
    if (table.status[p - 1] == WorkerStatus::retired) return;
    table.status[p - 1] = WorkerStatus::retired;
    ++table.version;
    save_table(table);
  }

  /// Snapshot of the result log under a shared lock.
  std::vector<ObservationRecord> read_results() const {
    FileLock lock(paths_.lock, FileLock::Mode::shared);
    return load_results_file(paths_.results);
  }

  RuntimeTable read_runtime_table() const {
    FileLock lock(paths_.lock, FileLock::Mode::shared);
    return load_table();
  }

  StateCache read_state_cache() const {
    FileLock lock(paths_.lock, FileLock::Mode::shared);
    return load_states();
  }

  /// Runs fn while holding the store's exclusive lock.
  template <class Fn>
  decltype(auto) with_exclusive_lock(Fn&& fn) const {
    FileLock lock(paths_.lock, FileLock::Mode::exclusive);
    return std::forward<Fn>(fn)();
  }

  // The accessors below expect the caller to hold the store lock.

  RuntimeTable load_table() const {
    try {
      return runtime_table_from_json(load_json(paths_.runtimes));
    } catch (const nlohmann::json::exception& e) {
      throw runtime_error("sync-store", "corrupt file " + paths_.runtimes.string() + ": " + e.what());
    }
  }

  void save_table(const RuntimeTable& table) const { detail::replace_file(paths_.runtimes, to_json(table).dump()); }

  StateCache load_states() const {
    try {
      return state_cache_from_json(load_json(paths_.states));
    } catch (const nlohmann::json::exception& e) {
      throw runtime_error("sync-store", "corrupt file " + paths_.states.string() + ": " + e.what());
    }
  }

  void save_states(const StateCache& cache) const { detail::replace_file(paths_.states, to_json(cache).dump()); }

  std::optional<Json> load_policy_state() const {
    if (!fs::exists(paths_.policy)) return std::nullopt;
    return load_json(paths_.policy);
  }

  void save_policy_state(const Json& state) const { detail::replace_file(paths_.policy, state.dump()); }

  /// Wall-clock seconds (epoch based) at which the store was created.
  double created_at() const noexcept { return created_at_; }

 private:
  Store(StorePaths paths, ExperimentSettings settings) : paths_(std::move(paths)), settings_(std::move(settings)) {}

  static double wall_seconds() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  }

  // Settings that must agree between every process attached to one store.
  static Json fingerprint(const ExperimentSettings& s) {
    auto j = to_json(s);
    j.erase("max_waiting_time");
    j.erase("check_interval_time");
    return j;
  }

  static StorePoisonedError poisoned_error() {
    return StorePoisonedError("store is poisoned: a worker exceeded max_waiting_time");
  }

  Json load_json(const fs::path& path) const { return read_json_file(path, "sync-store"); }

  void check_worker(WorkerIndex p) const {
    if (p == 0 || p > settings_.n_workers)
      throw runtime_error("sync-store", "worker index " + std::to_string(p) + " out of range");
  }

  void poison(RuntimeTable& table) const {
    table.poisoned = true;
    ++table.version;
    save_table(table);
  }

  ObservationRecord deliver(RuntimeTable& table, const PendingJob& job, const DeliveryHook& on_deliver) const {
    auto record = make_record(job, table.delivered + 1);
    auto order = settings_.obj_keys;
    order.push_back(settings_.runtime_key);
    detail::append_line(paths_.results, to_json(record, settings_.store_config, order).dump());
    const Json wall{{"index", record.index}, {"wall_time", wall_seconds() - created_at_}};
    detail::append_line(paths_.wall_times, wall.dump());
    if (settings_.restart_enabled()) {
      auto cache = load_states();
      record_checkpoint(cache, record, settings_);
      save_states(cache);
    }
    if (on_deliver) on_deliver(record);
    ++table.delivered;
    table.status[job.worker - 1] = WorkerStatus::sampling;
    if (table.delivered >= settings_.n_evals) table.finished = true;
    ++table.version;
    save_table(table);
    return record;
  }

  // Re-checks the table every check_interval_time seconds. step(table,
  // timed_out) runs under the exclusive lock and returns true when done;
  // timed_out is set once max_waiting_time passes without any transition.
  template <class Step>
  void poll(Step&& step) {
    using Clock = std::chrono::steady_clock;
    std::optional<std::uint64_t> seen;
    auto last_progress = Clock::now();
    for (;;) {
      double idle = 0.0;
      {
        FileLock lock(paths_.lock, FileLock::Mode::exclusive);
        auto table = load_table();
        if (table.poisoned) throw poisoned_error();
        const auto now = Clock::now();
        if (!seen || *seen != table.version) {
          seen = table.version;
          last_progress = now;
        }
        idle = std::chrono::duration<double>(now - last_progress).count();
        if (step(table, idle >= settings_.max_waiting_time)) return;
      }
      const double remaining = settings_.max_waiting_time - idle;
      const double nap = std::min(settings_.check_interval_time, std::max(remaining, 0.0));
      std::this_thread::sleep_for(std::chrono::duration<double>(nap));
    }
  }

  StorePaths paths_;
  ExperimentSettings settings_;
  std::optional<WorkerIndex> worker_;
  double created_at_ = 0.0;
};

}  // namespace mfsim
