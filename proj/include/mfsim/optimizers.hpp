#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mfsim/core.hpp"
#include "mfsim/io.hpp"
#include "mfsim/rng.hpp"
#include "mfsim/sim_core.hpp"

namespace mfsim {

/// Ask-and-tell optimizer whose whole state can be persisted, so several
/// processes can take turns driving one logical optimizer.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Suggestion ask() = 0;
  virtual void tell(const ObservationRecord& record) = 0;
  virtual Json save_state() const = 0;
  virtual void load_state(const Json& state) = 0;
};

// ---------------------------------------------------------------------------
// Sampling helpers
// ---------------------------------------------------------------------------

/// Uniform draw from one dimension; log-flagged ranges are sampled
/// log-uniformly.
inline ParamValue sample_value(const DimensionSpec& dim, Rng& rng) {
  return std::visit(
      [&](const auto& d) -> ParamValue {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, ContinuousRange>) {
          if (d.log) return std::clamp(std::exp(rng.uniform(std::log(d.lower), std::log(d.upper))), d.lower, d.upper);
          return rng.uniform(d.lower, d.upper);
        } else if constexpr (std::is_same_v<D, IntegerRange>) {
          const auto span = static_cast<std::uint64_t>(d.upper - d.lower) + 1;
          return static_cast<double>(d.lower + static_cast<std::int64_t>(rng.below(span)));
        } else if constexpr (std::is_same_v<D, OrdinalGrid>) {
          return d.grid[rng.below(d.grid.size())];
        } else {
          return d.choices[rng.below(d.choices.size())];
        }
      },
      dim.domain);
}

inline ConfigPoint sample_config(const SearchSpace& space, Rng& rng) {
  ConfigPoint::Values values;
  for (const auto& dim : space.dimensions()) values.emplace(dim.name, sample_value(dim, rng));
  return ConfigPoint(std::move(values));
}

enum class FidelityChoice { max, uniform };

inline std::optional<FidelityAssignment> choose_fidelities(std::span<const DimensionSpec> specs, FidelityChoice choice,
                                                           Rng& rng) {
  if (specs.empty()) return std::nullopt;
  FidelityAssignment out;
  for (const auto& spec : specs) {
    const auto value = choice == FidelityChoice::max ? ParamValue(spec.upper_bound()) : sample_value(spec, rng);
    out.emplace(spec.name, std::get<double>(value));
  }
  return out;
}

/// One random-search suggestion at maximum fidelity.
inline Suggestion random_search_ask(const SearchSpace& space, std::span<const DimensionSpec> fidelities, Rng& rng) {
  auto config = sample_config(space, rng);
  return Suggestion{std::move(config), QueryArgs{choose_fidelities(fidelities, FidelityChoice::max, rng), std::nullopt}};
}

// ---------------------------------------------------------------------------
// Random search
// ---------------------------------------------------------------------------

class RandomSearch final : public Policy {
 public:
  RandomSearch(SearchSpace space, std::vector<DimensionSpec> fidelities, std::uint64_t seed,
               FidelityChoice fidelity = FidelityChoice::max)
      : space_(std::move(space)), fidelities_(std::move(fidelities)), fidelity_(fidelity), rng_(seed) {}

  Suggestion ask() override {
    auto config = sample_config(space_, rng_);
    auto fidels = choose_fidelities(fidelities_, fidelity_, rng_);
    ++asked_;
    return Suggestion{std::move(config), QueryArgs{std::move(fidels), std::nullopt}};
  }

  void tell(const ObservationRecord&) override { ++told_; }

  Json save_state() const override { return Json{{"rng", rng_.state()}, {"asked", asked_}, {"told", told_}}; }

  void load_state(const Json& state) override {
    rng_.restore(state.at("rng").get<std::string>());
    asked_ = state.at("asked").get<std::size_t>();
    told_ = state.at("told").get<std::size_t>();
  }

  std::size_t asked() const noexcept { return asked_; }
  std::size_t told() const noexcept { return told_; }

 private:
  SearchSpace space_;
  std::vector<DimensionSpec> fidelities_;
  FidelityChoice fidelity_;
  Rng rng_;
  std::size_t asked_ = 0;
  std::size_t told_ = 0;
};

// ---------------------------------------------------------------------------
// Successive halving / HyperBand
// ---------------------------------------------------------------------------

/// Rung fidelities max / eta^k (ascending, down to min) and the standard
/// HyperBand brackets over them.
class HyperbandSchedule {
 public:
  struct Bracket {
    std::size_t first_rung = 0;  // index into rungs()
    std::size_t n_configs = 0;   // configurations started in a synchronous sweep
  };

  HyperbandSchedule(int eta, double min_fidelity, double max_fidelity, bool integer = true) : eta_(eta) {
    if (eta < 2) throw validation_error("optimizers", "eta must be an integer >= 2");
    if (!(min_fidelity > 0.0) || !(min_fidelity <= max_fidelity) || !std::isfinite(max_fidelity))
      throw validation_error("optimizers", "fidelity range must satisfy 0 < min <= max");
    for (double r = max_fidelity; r >= min_fidelity * (1.0 - 1e-12); r /= eta) {
      const double value = integer ? std::round(r) : r;
      if (rungs_.empty() || value < rungs_.back()) rungs_.push_back(value);
    }
    std::reverse(rungs_.begin(), rungs_.end());
  }

  int eta() const noexcept { return eta_; }
  const std::vector<double>& rungs() const noexcept { return rungs_; }
  double min_fidelity() const { return rungs_.front(); }
  double max_fidelity() const { return rungs_.back(); }

  std::vector<Bracket> brackets() const {
    const std::size_t s_max = rungs_.size() - 1;
    std::vector<Bracket> out;
    for (std::size_t s = s_max + 1; s-- > 0;) {
      const double n = std::ceil(static_cast<double>(s_max + 1) / static_cast<double>(s + 1) *
                                 std::pow(static_cast<double>(eta_), static_cast<double>(s)));
      out.push_back(Bracket{s_max - s, static_cast<std::size_t>(n)});
    }
    return out;
  }

 private:
  int eta_;
  std::vector<double> rungs_;
};

struct AshaOptions {
  std::string fidelity_key = "epoch";
  std::string objective_key = "loss";
  std::size_t n_brackets = 1;  // 1 is plain ASHA; more gives asynchronous HyperBand
};

/// Asynchronous successive halving.
///
/// ask() promotes a configuration as soon as it sits in the top 1/eta of a
/// rung that holds at least eta results (ties by earlier delivery), checking
/// higher rungs first; otherwise it starts a fresh random configuration at
/// the lowest rung of the next bracket (round robin).
class Asha final : public Policy {
 public:
  Asha(SearchSpace space, HyperbandSchedule schedule, AshaOptions options, std::uint64_t seed)
      : space_(std::move(space)), schedule_(std::move(schedule)), options_(std::move(options)), rng_(seed) {
    if (options_.n_brackets == 0 || options_.n_brackets > schedule_.rungs().size())
      throw validation_error("optimizers", "n_brackets must be between 1 and the number of rungs");
    rungs_.assign(options_.n_brackets, std::vector<Rung>(schedule_.rungs().size()));
  }

  const HyperbandSchedule& schedule() const noexcept { return schedule_; }

  Suggestion ask() override {
    if (auto promoted = next_promotion()) return *promoted;

    ConfigPoint config;
    for (int attempt = 0;; ++attempt) {
      config = sample_config(space_, rng_);
      if (!trials_.contains(config.key())) break;
      if (attempt == 1000) throw runtime_error("optimizers", "search space exhausted: no unseen configuration found");
    }
    const std::size_t bracket = next_bracket_;
    next_bracket_ = (next_bracket_ + 1) % options_.n_brackets;
    auto& trial = trials_[config.key()];
    trial = Trial{config, bracket, bracket, true};
    return suggestion(trial);
  }

  void tell(const ObservationRecord& record) override {
    const auto key = record.config.key();
    const auto it = trials_.find(key);
    if (it == trials_.end()) throw runtime_error("optimizers", "tell for unknown config " + key);
    auto& trial = it->second;
    if (!trial.pending) throw runtime_error("optimizers", "tell without an outstanding ask for " + key);
    const double expected = schedule_.rungs()[trial.rung];
    if (record.args.fidels) {
      const auto f = record.args.fidels->find(options_.fidelity_key);
      if (f == record.args.fidels->end() || f->second != expected)
        throw runtime_error("optimizers", "result for " + key + " does not match its rung fidelity " + format_number(expected));
    }
    const auto loss = record.objectives.find(options_.objective_key);
    if (loss == record.objectives.end())
      throw runtime_error("optimizers", "result has no objective '" + options_.objective_key + "'");
    rungs_[trial.bracket][trial.rung].results.push_back(RungEntry{loss->second, record.index, key});
    trial.pending = false;
  }

  Json save_state() const override {
    Json trials = Json::array();
    for (const auto& [key, t] : trials_)
      trials.push_back(Json{{"config", to_json(t.config)}, {"bracket", t.bracket}, {"rung", t.rung}, {"pending", t.pending}});
    Json brackets = Json::array();
    for (const auto& bracket : rungs_) {
      Json rungs = Json::array();
      for (const auto& rung : bracket) {
        Json results = Json::array();
        for (const auto& e : rung.results) results.push_back(Json::array({number_json(e.loss), e.index, e.key}));
        rungs.push_back(Json{{"results", std::move(results)}, {"promoted", rung.promoted}});
      }
      brackets.push_back(std::move(rungs));
    }
    return Json{{"rng", rng_.state()},
                {"next_bracket", next_bracket_},
                {"trials", std::move(trials)},
                {"rungs", std::move(brackets)}};
  }

  void load_state(const Json& state) override {
    rng_.restore(state.at("rng").get<std::string>());
    next_bracket_ = state.at("next_bracket").get<std::size_t>();
    trials_.clear();
    for (const auto& t : state.at("trials")) {
      auto config = config_from_json(t.at("config"));
      auto key = config.key();
      trials_.emplace(std::move(key), Trial{std::move(config), t.at("bracket").get<std::size_t>(),
                                            t.at("rung").get<std::size_t>(), t.at("pending").get<bool>()});
    }
    const auto& brackets = state.at("rungs");
    if (brackets.size() != rungs_.size()) throw runtime_error("optimizers", "saved ASHA state has a different bracket count");
    for (std::size_t b = 0; b < rungs_.size(); ++b) {
      for (std::size_t k = 0; k < rungs_[b].size(); ++k) {
        auto& rung = rungs_[b][k];
        const auto& saved = brackets[b].at(k);
        rung.results.clear();
        for (const auto& e : saved.at("results"))
          rung.results.push_back(RungEntry{json_number(e.at(0), "loss"), e.at(1).get<std::size_t>(), e.at(2).get<std::string>()});
        rung.promoted = saved.at("promoted").get<std::set<std::string>>();
      }
    }
  }

  /// Rung of the latest ask for one configuration key.
  std::size_t rung_of(const std::string& key) const { return trials_.at(key).rung; }

 private:
  struct Trial {
    ConfigPoint config;
    std::size_t bracket = 0;
    std::size_t rung = 0;  // rung of the latest ask
    bool pending = false;
  };

  struct RungEntry {
    double loss = 0.0;
    std::size_t index = 0;  // delivery index, breaks loss ties
    std::string key;
  };

  struct Rung {
    std::vector<RungEntry> results;
    std::set<std::string> promoted;
  };

  Suggestion suggestion(const Trial& trial) const {
    FidelityAssignment fidels{{options_.fidelity_key, schedule_.rungs()[trial.rung]}};
    return Suggestion{trial.config, QueryArgs{std::move(fidels), std::nullopt}};
  }

  std::optional<Suggestion> next_promotion() {
    const auto eta = static_cast<std::size_t>(schedule_.eta());
    for (std::size_t b = 0; b < rungs_.size(); ++b) {
      for (std::size_t k = rungs_[b].size() - 1; k-- > b;) {
        auto& rung = rungs_[b][k];
        if (rung.results.size() < eta) continue;
        auto ranked = rung.results;
        std::sort(ranked.begin(), ranked.end(), [](const RungEntry& x, const RungEntry& y) {
          return x.loss < y.loss || (x.loss == y.loss && x.index < y.index);
        });
        const std::size_t top = ranked.size() / eta;
        for (std::size_t i = 0; i < top; ++i) {
          if (rung.promoted.contains(ranked[i].key)) continue;
          rung.promoted.insert(ranked[i].key);
          auto& trial = trials_.at(ranked[i].key);
          trial.rung = k + 1;
          trial.pending = true;
          return suggestion(trial);
        }
      }
    }
    return std::nullopt;
  }

  SearchSpace space_;
  HyperbandSchedule schedule_;
  AshaOptions options_;
  Rng rng_;
  std::size_t next_bracket_ = 0;
  std::map<std::string, Trial> trials_;
  std::vector<std::vector<Rung>> rungs_;  // [bracket][rung]
};

}  // namespace mfsim
