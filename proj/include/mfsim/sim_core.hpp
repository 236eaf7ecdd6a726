#pragma once

#include <chrono>
#include <concepts>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mfsim/core.hpp"

// Simulated-clock kernel: restart credit, worker charging and delivery order,
// plus the single-threaded ask-and-tell driver that multiplexes P virtual
// workers. Nothing in here touches files or threads.

namespace mfsim {

/// What an optimizer hands out on ask(): a configuration and its query args.
struct Suggestion {
  ConfigPoint config;
  QueryArgs args;
};

/// A charged job waiting for its turn to be delivered.
struct PendingJob {
  WorkerIndex worker = 1;
  ConfigPoint config;
  QueryArgs args;
  QueryResult result;
  double restart_credit = 0.0;
  double sample_latency = 0.0;   // t^(N)
  double finish_time = 0.0;      // T_p after charging this job
};

/// One delivered observation, in chronological delivery order.
struct ObservationRecord {
  std::size_t index = 0;  // 1-based delivery index
  WorkerIndex worker = 1;
  ConfigPoint config;
  QueryArgs args;
  std::map<std::string, double, std::less<>> objectives;
  double runtime = 0.0;         // tau reported by the benchmark
  double restart_credit = 0.0;  // tau' subtracted when resuming a checkpoint
  double sample_latency = 0.0;
  double finish_time = 0.0;     // simulated delivery time

  friend bool operator==(const ObservationRecord&, const ObservationRecord&) = default;
};

// ---------------------------------------------------------------------------
// Restart checkpoints
// ---------------------------------------------------------------------------

/// Intermediate states keyed by canonical configuration key. A configuration
/// may own several states at once.
class StateCache {
 public:
  using States = std::vector<IntermediateState>;
  using Map = std::map<std::string, States, std::less<>>;

  StateCache() = default;
  explicit StateCache(Map entries) : entries_(std::move(entries)) {}

  const States* find(std::string_view key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  void add(const std::string& key, IntermediateState state) {
    entries_[key].push_back(std::move(state));
  }

  void remove(std::string_view key, std::size_t position) {
    const auto it = entries_.find(key);
    if (it == entries_.end() || position >= it->second.size())
      throw runtime_error("sim-core", "no checkpoint " + std::to_string(position) + " for " + std::string(key));
    it->second.erase(it->second.begin() + static_cast<std::ptrdiff_t>(position));
    if (it->second.empty()) entries_.erase(it);
  }

  const Map& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }

  friend bool operator==(const StateCache&, const StateCache&) = default;

 private:
  Map entries_;
};

struct RestartCredit {
  double credit = 0.0;                 // tau'
  std::optional<std::size_t> position;  // index of the chosen state in its list
  std::optional<IntermediateState> state;
};

namespace detail {
inline std::optional<double> single_fidelity(const QueryArgs& args, const ExperimentSettings& settings) {
  if (!args.fidels || settings.fidel_keys.size() != 1) return std::nullopt;
  const auto it = args.fidels->find(settings.fidel_keys.front());
  if (it == args.fidels->end()) return std::nullopt;
  return it->second;
}
}  // namespace detail

/// Picks the checkpoint this evaluation may resume from.
///
/// Eligible states completed no later than start_time and ran at a strictly
/// lower fidelity than the new query; the one with the most runtime spent
/// wins. Without continual_max_fidel the credit is always zero.
inline RestartCredit resolve_restart(const StateCache& cache, const ConfigPoint& config,
                                     const QueryArgs& args, double start_time,
                                     const ExperimentSettings& settings) {
  RestartCredit out;
  if (!settings.restart_enabled()) return out;
  const auto fidelity = detail::single_fidelity(args, settings);
  if (!fidelity) return out;
  const auto* states = cache.find(config.key());
  if (!states) return out;
  for (std::size_t i = 0; i < states->size(); ++i) {
    const auto& state = (*states)[i];
    if (state.completion_time > start_time) continue;
    const auto state_fidelity = detail::single_fidelity(state.args, settings);
    if (!state_fidelity || !(*state_fidelity < *fidelity)) continue;
    if (!out.position || state.runtime_spent > out.credit) {
      out.credit = state.runtime_spent;
      out.position = i;
      out.state = state;
    }
  }
  return out;
}

/// Stores the checkpoint a delivered evaluation leaves behind. Evaluations at
/// continual_max_fidel cannot be resumed and leave nothing.
inline void record_checkpoint(StateCache& cache, const ObservationRecord& record,
                              const ExperimentSettings& settings) {
  if (!settings.restart_enabled()) return;
  const auto fidelity = detail::single_fidelity(record.args, settings);
  if (!fidelity || *fidelity >= static_cast<double>(*settings.continual_max_fidel)) return;
  cache.add(record.config.key(), IntermediateState{record.runtime, record.finish_time, record.args});
}

// ---------------------------------------------------------------------------
// Clock arithmetic
// ---------------------------------------------------------------------------

/// Charges one job to worker p:
///   T_now <- max(T_now, T_p) + t,   T_p <- T_now + tau - tau'.
inline SimClock charge_job(SimClock clock, WorkerIndex p, double sample_latency, double runtime,
                           double credit) {
  if (p == 0 || p > clock.workers())
    throw runtime_error("sim-core", "worker index " + std::to_string(p) + " out of range");
  if (!(sample_latency >= 0.0) || !std::isfinite(sample_latency))
    throw runtime_error("sim-core", "sampling latency must be finite and non-negative");
  if (!(runtime >= 0.0) || !std::isfinite(runtime))
    throw runtime_error("sim-core", "runtime must be finite and non-negative, got " + format_number(runtime));
  if (!(credit >= 0.0)) throw runtime_error("sim-core", "restart credit must be non-negative");
  if (runtime < credit)
    throw runtime_error("sim-core", "runtime " + format_number(runtime) + " is below the restart credit " +
                                        format_number(credit) + "; the runtime model is not monotone in fidelity");
  double& worker_time = clock.worker_times[p - 1];
  clock.now = std::max(clock.now, worker_time) + sample_latency;
  worker_time = clock.now + runtime - credit;
  ++clock.observations;
  return clock;
}

/// Index (into pending) of the job delivered next: the job whose worker has
/// the smallest cumulative time, ties going to the lowest worker index.
inline std::size_t release_order(const SimClock& clock, std::span<const PendingJob> pending) {
  if (pending.empty()) throw runtime_error("sim-core", "release_order needs at least one pending job");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pending.size(); ++i) {
    const double ti = clock.time(pending[i].worker);
    const double tb = clock.time(pending[best].worker);
    if (ti < tb || (ti == tb && pending[i].worker < pending[best].worker)) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Ask-and-tell simulation
// ---------------------------------------------------------------------------

/// How t^(N) is obtained: measured wall clock, or a fixed value.
class SamplingLatency {
 public:
  static SamplingLatency measured() { return SamplingLatency(std::nullopt); }
  static SamplingLatency constant(double seconds) {
    if (!(seconds >= 0.0) || !std::isfinite(seconds))
      throw validation_error("sim-core", "constant sampling latency must be finite and non-negative");
    return SamplingLatency(seconds);
  }

  bool is_measured() const noexcept { return !value_; }

  /// elapsed is the wall-clock duration of the ask being charged.
  double resolve(double elapsed) const noexcept { return value_ ? *value_ : elapsed; }

 private:
  explicit SamplingLatency(std::optional<double> value) : value_(value) {}
  std::optional<double> value_;
};

template <class P>
concept AskTellPolicy = requires(P& policy, const ObservationRecord& record) {
  { policy.ask() } -> std::convertible_to<Suggestion>;
  policy.tell(record);
};

/// Objectives are called as f(config, args) or f(config, args, ask_number);
/// the ask number lets stochastic benchmarks derive a reproducible stream.
template <class F>
concept Objective = std::is_invocable_r_v<QueryResult, F&, const ConfigPoint&, const QueryArgs&> ||
                    std::is_invocable_r_v<QueryResult, F&, const ConfigPoint&, const QueryArgs&, std::size_t>;

template <Objective F>
QueryResult invoke_objective(F& objective, const Suggestion& s, std::size_t ask_number) {
  if constexpr (std::is_invocable_r_v<QueryResult, F&, const ConfigPoint&, const QueryArgs&, std::size_t>)
    return objective(s.config, s.args, ask_number);
  else
    return objective(s.config, s.args);
}

struct SimulationReport {
  std::vector<ObservationRecord> records;
  SimClock clock;
  std::vector<PendingJob> unfinished;  // charged but never delivered
  std::size_t asks = 0;
};

/// Builds the observation record for a job delivered as the index-th result.
inline ObservationRecord make_record(const PendingJob& job, std::size_t index) {
  return ObservationRecord{index,
                           job.worker,
                           job.config,
                           job.args,
                           job.result.objectives,
                           job.result.runtime,
                           job.restart_credit,
                           job.sample_latency,
                           job.finish_time};
}

/// Runs an ask-and-tell optimizer against P virtual workers on one thread.
///
/// At every step the worker with the smallest (T_p, p) acts: if it holds a
/// job, that job is delivered and told; if it is idle, the optimizer is asked
/// on its behalf and the job is charged. This reproduces the delivery order of
/// P real workers running the same decisions.
template <AskTellPolicy Policy, Objective F>
SimulationReport simulate_ask_and_tell(Policy& policy, F&& objective, const ExperimentSettings& settings,
                                       SamplingLatency latency = SamplingLatency::measured(),
                                       const std::function<void(const ObservationRecord&)>& on_record = {}) {
  using Clock = std::chrono::steady_clock;
  validate_settings(settings);

  SimulationReport report;
  report.clock = SimClock(settings.n_workers);
  StateCache checkpoints;
  std::vector<std::optional<PendingJob>> busy(settings.n_workers);
  auto last_event_end = Clock::now();

  while (report.records.size() < settings.n_evals) {
    const WorkerIndex p = report.clock.argmin();
    auto& slot = busy[p - 1];

    if (!slot) {
      if (report.asks >= settings.n_actual_evals_in_opt)
        throw runtime_error("sim-core", "optimizer asked more than n_actual_evals_in_opt (" +
                                            std::to_string(settings.n_actual_evals_in_opt) + ") times");
      Suggestion suggestion = policy.ask();
      const double elapsed = std::chrono::duration<double>(Clock::now() - last_event_end).count();
      const double t = latency.resolve(elapsed);
      const std::size_t ask_number = report.asks++;
      QueryResult result = invoke_objective(objective, suggestion, ask_number);

      const double start = std::max(report.clock.now, report.clock.time(p)) + t;
      const auto restart = resolve_restart(checkpoints, suggestion.config, suggestion.args, start, settings);
      if (restart.position) checkpoints.remove(suggestion.config.key(), *restart.position);
      report.clock = charge_job(std::move(report.clock), p, t, result.runtime, restart.credit);

      slot = PendingJob{p,
                        std::move(suggestion.config),
                        std::move(suggestion.args),
                        std::move(result),
                        restart.credit,
                        t,
                        report.clock.time(p)};
      last_event_end = Clock::now();
      continue;
    }

    ObservationRecord record = make_record(*slot, report.records.size() + 1);
    slot.reset();
    policy.tell(record);
    record_checkpoint(checkpoints, record, settings);
    if (on_record) on_record(record);
    report.records.push_back(std::move(record));
    last_event_end = Clock::now();
  }

  for (auto& slot : busy)
    if (slot) report.unfinished.push_back(std::move(*slot));
  return report;
}

}  // namespace mfsim
