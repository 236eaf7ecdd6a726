#pragma once

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

#include "mfsim/sim_core.hpp"

// Naive baseline: P real threads that actually sleep through every runtime,
// scaled to wall-clock seconds. Slow by construction; exists to show that the
// simulator reproduces the delivery order real workers would see.

namespace mfsim {

/// time_scale converts simulated seconds to real seconds (1/3600 sleeps one
/// real second per simulated hour). Records carry real times divided back by
/// time_scale, so they are comparable with the simulated clock.
template <AskTellPolicy Policy, Objective F>
SimulationReport simulate_naive(Policy& policy, F&& objective, const ExperimentSettings& settings, double time_scale) {
  using Clock = std::chrono::steady_clock;
  validate_settings(settings);
  if (!(time_scale > 0.0) || !std::isfinite(time_scale))
    throw validation_error("sim-core", "naive time scale must be positive");

  std::mutex mutex;
  std::condition_variable cv;
  SimulationReport report;
  report.clock = SimClock(settings.n_workers);
  StateCache checkpoints;
  std::size_t initial_turn = 1;  // first asks go out in worker order
  const auto start = Clock::now();
  const auto sim_now = [&] { return std::chrono::duration<double>(Clock::now() - start).count() / time_scale; };

  const auto work = [&](WorkerIndex p) {
    std::unique_lock lock(mutex);
    cv.wait(lock, [&] { return initial_turn == p; });
    bool first = true;
    for (;;) {
      if (report.records.size() >= settings.n_evals || report.asks >= settings.n_actual_evals_in_opt) break;
      const double ask_begin = sim_now();
      Suggestion suggestion = policy.ask();
      const std::size_t ask_number = report.asks++;
      QueryResult result = invoke_objective(objective, suggestion, ask_number);
      const double issued = sim_now();
      const auto restart = resolve_restart(checkpoints, suggestion.config, suggestion.args, issued, settings);
      if (restart.position) checkpoints.remove(suggestion.config.key(), *restart.position);
      PendingJob job{p, std::move(suggestion.config), std::move(suggestion.args), std::move(result),
                     restart.credit, issued - ask_begin, 0.0};
      if (first) {
        first = false;
        ++initial_turn;
        cv.notify_all();
      }

      lock.unlock();
      const auto sleep = std::chrono::duration<double>((job.result.runtime - job.restart_credit) * time_scale);
      std::this_thread::sleep_until(start + std::chrono::duration_cast<Clock::duration>(
                                                std::chrono::duration<double>(issued * time_scale)) +
                                    std::chrono::duration_cast<Clock::duration>(sleep));
      lock.lock();

      job.finish_time = sim_now();
      if (report.records.size() >= settings.n_evals) {
        report.unfinished.push_back(std::move(job));
        break;
      }
      report.clock.worker_times[p - 1] = job.finish_time;
      report.clock.now = std::max(report.clock.now, job.finish_time);
      ++report.clock.observations;
      ObservationRecord record = make_record(job, report.records.size() + 1);
      policy.tell(record);
      record_checkpoint(checkpoints, record, settings);
      report.records.push_back(std::move(record));
    }
    if (first) {
      ++initial_turn;
      cv.notify_all();
    }
  };

  std::vector<std::jthread> threads;
  for (WorkerIndex p = 1; p <= settings.n_workers; ++p) threads.emplace_back(work, p);
  threads.clear();
  return report;
}

}  // namespace mfsim
