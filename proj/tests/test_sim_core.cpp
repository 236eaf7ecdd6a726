#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mfsim/naive.hpp"
#include "mfsim/sim_core.hpp"
#include "test_support.hpp"

using namespace mfsim;
using namespace testing_support;

namespace {

ExperimentSettings settings_for(std::size_t workers, std::size_t evals) {
  ExperimentSettings s;
  s.n_workers = workers;
  s.n_evals = evals;
  s.n_actual_evals_in_opt = evals + workers;
  return s;
}

ExperimentSettings restart_settings(std::size_t workers, std::size_t evals, std::int64_t max_fidel) {
  auto s = settings_for(workers, evals);
  s.fidel_keys = {"epoch"};
  s.continual_max_fidel = max_fidel;
  return s;
}

QueryArgs at_epoch(double epoch) { return QueryArgs{FidelityAssignment{{"epoch", epoch}}, std::nullopt}; }

}  // namespace

// ---------------------------------------------------------------------------
// charge_job
// ---------------------------------------------------------------------------

TEST(ChargeJob, SingleCharge) {
  const auto clock = charge_job(SimClock(1), 1, 0.0, 3.0, 0.0);
  EXPECT_EQ(clock.now, 0.0);
  EXPECT_EQ(clock.time(1), 3.0);
  EXPECT_EQ(clock.observations, 1u);
}

TEST(ChargeJob, SubstitutesIntoTheUpdateRule) {
  SimClock clock(2);
  clock.now = 10.0;
  clock.worker_times = {4.0, 7.0};
  const auto out = charge_job(clock, 1, 1.0, 5.0, 0.0);
  EXPECT_EQ(out.now, 11.0);
  EXPECT_EQ(out.time(1), 16.0);
  EXPECT_EQ(out.time(2), 7.0);
}

TEST(ChargeJob, RestartCredit) {
  SimClock clock(1);
  clock.now = 11.0;
  clock.worker_times = {11.0};
  EXPECT_EQ(charge_job(clock, 1, 0.0, 20.0, 12.0).time(1), 19.0);
}

TEST(ChargeJob, RejectsCreditAboveRuntime) {
  EXPECT_THROW(charge_job(SimClock(1), 1, 0.0, 5.0, 6.0), Error);
  EXPECT_THROW(charge_job(SimClock(1), 1, -1.0, 5.0, 0.0), Error);
  EXPECT_THROW(charge_job(SimClock(1), 2, 0.0, 5.0, 0.0), Error);
  EXPECT_THROW(charge_job(SimClock(1), 1, 0.0, std::nan(""), 0.0), Error);
}

TEST(ChargeJob, ClockNeverMovesBackwardProperty) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    SimClock clock(1 + rng.below(4));
    for (int k = 0; k < 50; ++k) {
      const WorkerIndex p = 1 + rng.below(clock.workers());
      const double tau = rng.uniform(0.0, 10.0);
      const double credit = rng.below(2) ? rng.uniform(0.0, tau) : 0.0;
      const auto next = charge_job(clock, p, rng.uniform(0.0, 1.0), tau, credit);
      ASSERT_GE(next.now, clock.now);
      for (WorkerIndex q = 1; q <= clock.workers(); ++q) {
        if (q != p) {
          ASSERT_EQ(next.time(q), clock.time(q));
        }
      }
      ASSERT_GE(next.time(p), next.now);
      clock = next;
    }
  }
}

// ---------------------------------------------------------------------------
// release_order
// ---------------------------------------------------------------------------

TEST(ReleaseOrder, StrictArgmin) {
  SimClock clock(2);
  clock.worker_times = {3.0, 5.0};
  std::vector<PendingJob> jobs(2);
  jobs[0].worker = 2;
  jobs[1].worker = 1;
  EXPECT_EQ(release_order(clock, jobs), 1u);
}

TEST(ReleaseOrder, TieGoesToLowestWorker) {
  SimClock clock(2);
  clock.worker_times = {5.0, 5.0};
  std::vector<PendingJob> jobs(2);
  jobs[0].worker = 2;
  jobs[1].worker = 1;
  EXPECT_EQ(jobs[release_order(clock, jobs)].worker, 1u);
}

TEST(ReleaseOrder, ThreeWorkers) {
  SimClock clock(3);
  clock.worker_times = {7.0, 4.0, 9.0};
  std::vector<PendingJob> jobs(3);
  for (std::size_t i = 0; i < 3; ++i) jobs[i].worker = i + 1;
  EXPECT_EQ(jobs[release_order(clock, jobs)].worker, 2u);
  EXPECT_THROW(release_order(clock, std::span<const PendingJob>{}), Error);
}

// ---------------------------------------------------------------------------
// resolve_restart
// ---------------------------------------------------------------------------

TEST(ResolveRestart, NoStates) {
  const auto s = restart_settings(1, 1, 100);
  const auto credit = resolve_restart(StateCache{}, ConfigPoint{{"x", 1.0}}, at_epoch(100), 55.0, s);
  EXPECT_EQ(credit.credit, 0.0);
  EXPECT_FALSE(credit.state);
}

TEST(ResolveRestart, UsesPastCheckpoint) {
  const auto s = restart_settings(1, 1, 100);
  const ConfigPoint x{{"x", 1.0}};
  StateCache cache;
  cache.add(x.key(), IntermediateState{12.0, 40.0, at_epoch(20)});
  const auto credit = resolve_restart(cache, x, at_epoch(100), 55.0, s);
  EXPECT_EQ(credit.credit, 12.0);
  ASSERT_TRUE(credit.state);
  EXPECT_EQ(credit.state->completion_time, 40.0);
}

TEST(ResolveRestart, IgnoresFutureCheckpoint) {
  const auto s = restart_settings(1, 1, 100);
  const ConfigPoint x{{"x", 1.0}};
  StateCache cache;
  cache.add(x.key(), IntermediateState{12.0, 60.0, at_epoch(20)});
  EXPECT_EQ(resolve_restart(cache, x, at_epoch(100), 55.0, s).credit, 0.0);
}

TEST(ResolveRestart, PicksLargestEligibleAndNeedsLowerFidelity) {
  const auto s = restart_settings(1, 1, 100);
  const ConfigPoint x{{"x", 1.0}};
  StateCache cache;
  cache.add(x.key(), IntermediateState{5.0, 10.0, at_epoch(10)});
  cache.add(x.key(), IntermediateState{9.0, 20.0, at_epoch(30)});
  cache.add(x.key(), IntermediateState{30.0, 20.0, at_epoch(60)});  // not below the query
  const auto credit = resolve_restart(cache, x, at_epoch(50), 25.0, s);
  EXPECT_EQ(credit.credit, 9.0);
  EXPECT_EQ(*credit.position, 1u);
  EXPECT_EQ(resolve_restart(cache, ConfigPoint{{"x", 2.0}}, at_epoch(50), 25.0, s).credit, 0.0);
}

TEST(ResolveRestart, DisabledWithoutContinualMaxFidel) {
  auto s = settings_for(1, 1);
  s.fidel_keys = {"epoch"};
  const ConfigPoint x{{"x", 1.0}};
  StateCache cache;
  cache.add(x.key(), IntermediateState{12.0, 40.0, at_epoch(20)});
  EXPECT_EQ(resolve_restart(cache, x, at_epoch(100), 55.0, s).credit, 0.0);
}

TEST(RecordCheckpoint, SkipsMaximumFidelity) {
  const auto s = restart_settings(1, 1, 9);
  StateCache cache;
  ObservationRecord r;
  r.config = ConfigPoint{{"x", 1.0}};
  r.args = at_epoch(9);
  r.runtime = 5.0;
  record_checkpoint(cache, r, s);
  EXPECT_TRUE(cache.empty());
  r.args = at_epoch(3);
  record_checkpoint(cache, r, s);
  ASSERT_NE(cache.find(r.config.key()), nullptr);
  EXPECT_EQ(cache.find(r.config.key())->front().runtime_spent, 5.0);
}

// ---------------------------------------------------------------------------
// simulate_ask_and_tell
// ---------------------------------------------------------------------------

TEST(AskAndTell, SequentialSingleWorker) {
  ScriptedPolicy policy{{1, 1, 1, 1, 1, 1}};
  const auto report = simulate_ask_and_tell(policy, scripted_objective, settings_for(1, 5), SamplingLatency::constant(0));
  EXPECT_EQ(delivered_ids(report.records), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(report.clock.time(1), 5.0);
  EXPECT_EQ(policy.told, delivered_ids(report.records));
}

TEST(AskAndTell, HandTraceTwoWorkers) {
  ScriptedPolicy policy{{3, 5, 2, 100, 100}};
  const auto report = simulate_ask_and_tell(policy, scripted_objective, settings_for(2, 3), SamplingLatency::constant(0));
  EXPECT_EQ(delivered_ids(report.records), (std::vector<std::size_t>{0, 2, 1}));
  std::vector<double> finishes;
  for (const auto& r : report.records) finishes.push_back(r.finish_time);
  EXPECT_EQ(finishes, (std::vector<double>{3, 5, 5}));
  EXPECT_EQ(report.records[1].worker, 1u);
  EXPECT_EQ(report.records[2].worker, 2u);
}

TEST(AskAndTell, AsksStayWithinBudget) {
  // Each virtual worker holds at most one job, so a valid budget is never
  // exceeded: asks <= n_evals + P - 1.
  struct Counting {
    std::size_t asks = 0;
    Suggestion ask() {
      ++asks;
      return Suggestion{ConfigPoint{{"id", static_cast<double>(asks)}, {"runtime", static_cast<double>(asks % 7)}}, {}};
    }
    void tell(const ObservationRecord&) {}
  } policy;
  const auto s = settings_for(3, 30);
  const auto report = simulate_ask_and_tell(policy, scripted_objective, s, SamplingLatency::constant(0));
  EXPECT_LE(report.asks, s.n_evals + s.n_workers - 1);
  EXPECT_EQ(report.asks, 30u + report.unfinished.size());
}

TEST(AskAndTell, PropagatesPolicyAndBenchmarkErrors) {
  struct Throws {
    Suggestion ask() { throw mfsim::runtime_error("test", "boom"); }
    void tell(const ObservationRecord&) {}
  } throws;
  EXPECT_THROW(simulate_ask_and_tell(throws, scripted_objective, settings_for(2, 3), SamplingLatency::constant(0)), Error);
  ScriptedPolicy negative{{-1.0, 1.0, 1.0}};
  EXPECT_THROW(simulate_ask_and_tell(negative, scripted_objective, settings_for(1, 1), SamplingLatency::constant(0)), Error);
  auto bad = settings_for(2, 3);
  bad.n_actual_evals_in_opt = 4;
  ScriptedPolicy fine{{1, 1, 1, 1, 1}};
  EXPECT_THROW(simulate_ask_and_tell(fine, scripted_objective, bad, SamplingLatency::constant(0)), Error);
}

TEST(AskAndTell, OrderingInvariantProperty) {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t workers = 1 + rng.below(5);
    const std::size_t evals = 1 + rng.below(40);
    std::vector<double> runtimes;
    for (std::size_t i = 0; i < evals + workers; ++i) runtimes.push_back(rng.uniform(0.0, 50.0));
    ScriptedPolicy policy{runtimes};
    const auto report = simulate_ask_and_tell(policy, scripted_objective, settings_for(workers, evals),
                                              SamplingLatency::constant(rng.uniform(0.0, 2.0)));
    ASSERT_EQ(report.records.size(), evals);
    for (std::size_t i = 0; i < evals; ++i) {
      ASSERT_EQ(report.records[i].index, i + 1);
      if (i > 0) {
        ASSERT_LE(report.records[i - 1].finish_time, report.records[i].finish_time);
      }
    }
    for (const auto& job : report.unfinished) ASSERT_GE(job.finish_time, report.records.back().finish_time);
  }
}

TEST(AskAndTell, MatchesUnitStepOracle) {
  Rng rng(2024);
  int compared = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t workers = 2 + rng.below(2);
    const std::size_t evals = 4 + rng.below(5);
    std::vector<int> runtimes;
    for (std::size_t i = 0; i < evals + workers; ++i) runtimes.push_back(1 + static_cast<int>(rng.below(5)));
    const auto oracle = unit_step_oracle(runtimes, workers, evals);
    ScriptedPolicy policy{std::vector<double>(runtimes.begin(), runtimes.end())};
    const auto report = simulate_ask_and_tell(policy, scripted_objective, settings_for(workers, evals),
                                              SamplingLatency::constant(0));
    ASSERT_EQ(delivered_ids(report.records), oracle.order) << "trial " << trial;
    for (std::size_t i = 0; i < evals; ++i) ASSERT_EQ(report.records[i].finish_time, oracle.finish[i]);
    ++compared;
  }
  EXPECT_EQ(compared, 400);
}

TEST(AskAndTell, ConservationSingleWorker) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t evals = 1 + rng.below(30);
    std::vector<double> runtimes;
    for (std::size_t i = 0; i < evals + 1; ++i) runtimes.push_back(rng.uniform(0.0, 1e4));
    const double t = rng.uniform(0.0, 3.0);
    ScriptedPolicy policy{runtimes};
    const auto report = simulate_ask_and_tell(policy, scripted_objective, settings_for(1, evals), SamplingLatency::constant(t));
    double expected = 0.0;
    for (std::size_t i = 0; i < evals; ++i) expected = (expected + t) + runtimes[i];
    ASSERT_EQ(report.clock.time(1), expected);
  }
}

TEST(AskAndTell, RestartCreditsTelescope) {
  // One config promoted through epochs 1, 3, 9 on a single worker.
  struct Promoter {
    std::vector<double> epochs{1, 3, 9};
    std::size_t k = 0;
    Suggestion ask() { return Suggestion{ConfigPoint{{"x", 0.5}}, at_epoch(epochs.at(k++))}; }
    void tell(const ObservationRecord&) {}
  } policy;
  const auto tau = [](double epoch) { return 100.0 * (0.1 + 0.9 * epoch / 9.0); };
  const auto objective = [&](const ConfigPoint&, const QueryArgs& args) {
    const double r = tau(args.fidels->at("epoch"));
    return QueryResult{{{"loss", 0.0}, {"runtime", r}}, r};
  };
  auto s = restart_settings(1, 3, 9);
  s.n_actual_evals_in_opt = 4;
  const auto report = simulate_ask_and_tell(policy, objective, s, SamplingLatency::constant(0.25));
  EXPECT_DOUBLE_EQ(report.clock.time(1), tau(9) + 3 * 0.25);
  EXPECT_EQ(report.records[1].restart_credit, tau(1));
  EXPECT_EQ(report.records[2].restart_credit, tau(3));
}

TEST(AskAndTell, MeasuredLatencyIsCharged) {
  struct Slow {
    std::size_t k = 0;
    Suggestion ask() {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      return Suggestion{ConfigPoint{{"id", static_cast<double>(k++)}, {"runtime", 1.0}}, {}};
    }
    void tell(const ObservationRecord&) {}
  } policy;
  const auto report = simulate_ask_and_tell(policy, scripted_objective, settings_for(1, 3));
  for (const auto& r : report.records) EXPECT_GE(r.sample_latency, 0.004);
  EXPECT_GT(report.clock.time(1), 3.012);
}

// ---------------------------------------------------------------------------
// Sleep oracle: real threads sleeping scaled runtimes deliver in the same order
// ---------------------------------------------------------------------------

TEST(NaiveSleep, SameOrderAsSimulationWhenTimesAreDistinct) {
  Rng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 3; ++trial) {
    const std::size_t workers = 2 + rng.below(2);
    const std::size_t evals = 8;
    std::vector<int> runtimes;
    for (std::size_t i = 0; i < evals + workers; ++i) runtimes.push_back(1 + static_cast<int>(rng.below(9)));
    const auto oracle = unit_step_oracle(runtimes, workers, evals);
    auto finishes = oracle.all_finishes;
    std::sort(finishes.begin(), finishes.end());
    if (std::adjacent_find(finishes.begin(), finishes.end()) != finishes.end()) continue;  // ties excluded

    ScriptedPolicy sim_policy{std::vector<double>(runtimes.begin(), runtimes.end())};
    const auto sim = simulate_ask_and_tell(sim_policy, scripted_objective, settings_for(workers, evals),
                                           SamplingLatency::constant(0));
    ScriptedPolicy naive_policy{std::vector<double>(runtimes.begin(), runtimes.end())};
    const auto naive = simulate_naive(naive_policy, scripted_objective, settings_for(workers, evals), 0.02);
    ASSERT_EQ(delivered_ids(naive.records), delivered_ids(sim.records)) << "trial " << trial;
    ++checked;
  }
  EXPECT_EQ(checked, 3);
}
