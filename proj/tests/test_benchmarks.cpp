#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "mfsim/benchmarks.hpp"
#include "mfsim/io.hpp"
#include "mfsim/tabular.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mfsim;
using namespace testing_support;
using testing_oracles::branin_reference;
using testing_oracles::hartmann3_grid_refine_minimum;
using testing_oracles::hartmann3_reference;
using testing_oracles::kPi;

namespace {

ConfigPoint xy(double x1, double x2) { return ConfigPoint{{"x1", x1}, {"x2", x2}}; }

}  // namespace

TEST(Branin, FullFidelityIsExactBranin) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x1 = rng.uniform(-5, 10);
    const double x2 = rng.uniform(0, 15);
    EXPECT_EQ(branin(x1, x2, 1.0).objectives.at("loss"), branin(x1, x2, std::vector<double>{1, 1, 1}).objectives.at("loss"));
    EXPECT_NEAR(branin(x1, x2, 1.0).objectives.at("loss"), branin_reference(x1, x2), 1e-9);
  }
}

TEST(Branin, KnownMinimizerValue) {
  // Value frozen from branin_reference(pi, 2.275).
  EXPECT_NEAR(branin_reference(kPi, 2.275), 0.397887, 1e-6);
  EXPECT_NEAR(branin(kPi, 2.275, 1.0).objectives.at("loss"), 0.397887, 1e-4);
}

TEST(Branin, RuntimeEndpoints) {
  MfBraninParams p;
  p.runtime_scale = 100;
  EXPECT_DOUBLE_EQ(branin(0, 0, 0.0, p).runtime, 5.0);
  EXPECT_DOUBLE_EQ(branin(0, 0, 1.0, p).runtime, 100.0);
  EXPECT_EQ(branin(0, 0, 1.0, p).objectives.at("runtime"), 100.0);
}

TEST(Branin, FidelityConsistency) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double x1 = rng.uniform(-5, 10);
    const double x2 = rng.uniform(0, 15);
    const double exact = branin(x1, x2, 1.0).objectives.at("loss");
    double previous = std::numeric_limits<double>::infinity();
    for (const double gap : {1e-1, 1e-2, 1e-3, 1e-4, 1e-6}) {
      const double diff = std::abs(branin(x1, x2, 1.0 - gap).objectives.at("loss") - exact);
      EXPECT_LE(diff, previous + 1e-12);
      previous = diff;
    }
    EXPECT_LT(previous, 1e-3);
  }
}

TEST(Branin, DomainErrorsNameTheCoordinate) {
  try {
    branin(11, 0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), Error::Kind::validation);
    EXPECT_NE(std::string(e.what()).find("x1"), std::string::npos);
  }
  try {
    branin(0, 0, std::vector<double>{1, 1.5, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("z2"), std::string::npos);
  }
  EXPECT_THROW(branin(0, 0, std::vector<double>{1, 1}), Error);
}

TEST(Hartmann, GridRefineMinimum) {
  const double oracle = hartmann3_grid_refine_minimum();
  EXPECT_NEAR(oracle, -3.86278, 1e-3);
  const auto p = MfHartmannParams::three();
  const double at_oracle_argmin[3] = {0.114614, 0.555649, 0.852547};
  const double full[4] = {1, 1, 1, 1};
  EXPECT_NEAR(hartmann(std::vector<double>(at_oracle_argmin, at_oracle_argmin + 3), std::vector<double>{1}, p)
                  .objectives.at("loss"),
              hartmann3_reference(at_oracle_argmin, full), 1e-12);
  EXPECT_LT(oracle, 0.0);
}

TEST(Hartmann, MatchesReferencePointwise) {
  const auto p = MfHartmannParams::three();
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double x[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    const double z[4] = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const double got =
        hartmann(std::vector<double>(x, x + 3), std::vector<double>(z, z + 4), p).objectives.at("loss");
    ASSERT_NEAR(got, hartmann3_reference(x, z), 1e-12);
  }
}

TEST(Hartmann, RuntimeEndpoints) {
  const std::array<double, 4> ones{1, 1, 1, 1};
  const std::array<double, 4> zeros{0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(hartmann_runtime(ones, 3, 10), 10.0);
  EXPECT_DOUBLE_EQ(hartmann_runtime(ones, 6, 10), 10.0);
  EXPECT_DOUBLE_EQ(hartmann_runtime(zeros, 3, 10), 1.0);
  EXPECT_DOUBLE_EQ(hartmann_runtime(zeros, 6, 10), 1.0);
}

TEST(Hartmann, RuntimesAreMonotoneInEveryCoordinate) {
  Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    std::array<double, 4> z{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const std::size_t k = rng.below(4);
    auto up = z;
    up[k] = rng.uniform(z[k], 1.0);
    EXPECT_LE(hartmann_runtime(z, 3, 7), hartmann_runtime(up, 3, 7));
    EXPECT_LE(hartmann_runtime(z, 6, 7), hartmann_runtime(up, 6, 7));
    const double lo = rng.uniform();
    EXPECT_LE(branin_runtime(lo, 7), branin_runtime(rng.uniform(lo, 1.0), 7));
  }
}

TEST(Hartmann, NonPositiveEverywhere) {
  Rng rng(7);
  const auto three = MfHartmannParams::three();
  const auto six = MfHartmannParams::six();
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> x3(3), x6(6), z(4);
    for (auto& v : x3) v = rng.uniform();
    for (auto& v : x6) v = rng.uniform();
    for (auto& v : z) v = rng.uniform();
    EXPECT_LE(hartmann(x3, z, three).objectives.at("loss"), 0.0);
    EXPECT_LE(hartmann(x6, z, six).objectives.at("loss"), 0.0);
  }
  // Classic 6D minimum at full fidelity.
  const std::vector<double> argmin6{0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573};
  EXPECT_NEAR(hartmann(argmin6, std::vector<double>{1}, six).objectives.at("loss"), -3.32237, 1e-4);
}

TEST(Hartmann, DomainErrors) {
  const auto p = MfHartmannParams::three();
  try {
    hartmann(std::vector<double>{0.5, -0.1, 0.5}, std::vector<double>{1}, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("x2"), std::string::npos);
  }
  EXPECT_THROW(hartmann(std::vector<double>{0.5, 0.5}, std::vector<double>{1}, p), Error);
  EXPECT_THROW(hartmann(std::vector<double>{0.5, 0.5, 0.5}, std::vector<double>{1, 1, 1}, p), Error);
}

TEST(BenchmarkObjective, MapsNamedFidelities) {
  ExperimentSettings s;
  s.fidel_keys = {"epoch"};
  s.n_actual_evals_in_opt = 105;
  MfBraninParams params;
  params.runtime_scale = 100;
  MfBraninBenchmark bench(params, FidelityMapping{{"epoch"}, 1, 9, true});
  const BenchmarkObjective objective(bench, s);
  const auto r = objective(xy(kPi, 2.275), QueryArgs{FidelityAssignment{{"epoch", 9}}, std::nullopt}, 1);
  EXPECT_NEAR(r.objectives.at("loss"), 0.397887, 1e-4);
  EXPECT_DOUBLE_EQ(r.runtime, 100.0);
  try {
    objective(xy(0, 0), QueryArgs{FidelityAssignment{{"epochs", 9}}, std::nullopt}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
  }
  EXPECT_THROW(objective(xy(0, 0), QueryArgs{FidelityAssignment{{"epoch", 10}}, std::nullopt}, 3), Error);
}

// ---------------------------------------------------------------------------
// Tabular
// ---------------------------------------------------------------------------

namespace {

SpaceDescriptor toy_descriptor() {
  return SpaceDescriptor{SearchSpace({DimensionSpec::ordinal("lr", {0.01, 0.1}), DimensionSpec::categorical("act", {"relu", "tanh"})}, "toy"),
                         {DimensionSpec::integer("epoch", 1, 3)},
                         {}};
}

std::filesystem::path write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST(Tabular, ToyTableRoundTrip) {
  const auto dir = fresh_dir("toy");
  const auto csv = write_file(dir / "toy.csv",
                              "lr,act,seed,epoch,loss,runtime\n"
                              "0.01,relu,0,1,0.9,10\n"
                              "0.01,relu,1,1,0.8,11\n"
                              "0.1,tanh,0,3,0.3,30\n"
                              "0.1,\"tanh\",1,3,0.2,31\n");
  const auto table = load_tabular(toy_descriptor(), csv, "runtime");
  EXPECT_EQ(table.size(), 4u);
  const ConfigPoint a{{"lr", 0.01}, {"act", std::string("relu")}};
  const ConfigPoint b{{"lr", 0.1}, {"act", std::string("tanh")}};
  EXPECT_EQ(table.lookup(a, 0, {{"epoch", 1}}).at("loss"), 0.9);
  EXPECT_EQ(table.lookup(a, 1, {{"epoch", 1}}).at("runtime"), 11.0);
  EXPECT_EQ(table.lookup(b, 0, {{"epoch", 3}}).at("loss"), 0.3);
  EXPECT_EQ(table.lookup(b, 1, {{"epoch", 3}}).at("loss"), 0.2);

  Rng rng(0);
  const QueryArgs seeded{FidelityAssignment{{"epoch", 3}}, 1};
  EXPECT_EQ(table.query(b, seeded, rng), table.query(b, seeded, rng));
  EXPECT_THROW(table.lookup(b, 0, {{"epoch", 2}}), NotFoundError);
  EXPECT_THROW(table.query(ConfigPoint{{"lr", 0.1}, {"act", std::string("relu")}}, seeded, rng), NotFoundError);
  EXPECT_THROW(table.query(b, QueryArgs{FidelityAssignment{{"epoch", 3}, {"res", 1}}, 1}, rng), Error);
}

TEST(Tabular, LoaderRejectsBadFiles) {
  const auto dir = fresh_dir("badcsv");
  const auto no_runtime = write_file(dir / "a.csv", "lr,act,epoch,loss\n0.01,relu,1,0.5\n");
  const auto duplicate = write_file(dir / "b.csv", "lr,act,epoch,loss,runtime\n0.01,relu,1,0.5,1\n0.01,relu,1,0.6,1\n");
  const auto outside = write_file(dir / "c.csv", "lr,act,epoch,loss,runtime\n0.5,relu,1,0.5,1\n");
  try {
    load_tabular(toy_descriptor(), no_runtime, "runtime");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("runtime"), std::string::npos);
  }
  try {
    load_tabular(toy_descriptor(), duplicate, "runtime");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
  EXPECT_THROW(load_tabular(toy_descriptor(), outside, "runtime"), Error);
}

TEST(Tabular, UnseededDrawsAreUniformOverSeeds) {
  TabularTable table(toy_descriptor(), "runtime");
  const ConfigPoint a{{"lr", 0.01}, {"act", std::string("relu")}};
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    table.insert(a, seed, {{"epoch", 2}}, {{"loss", static_cast<double>(seed)}, {"runtime", 1}});
  Rng rng(42);
  std::array<int, 4> counts{};
  const QueryArgs args{FidelityAssignment{{"epoch", 2}}, std::nullopt};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(table.query(a, args, rng).at("loss"))];
  double chi2 = 0;
  for (const int c : counts) chi2 += (c - draws / 4.0) * (c - draws / 4.0) / (draws / 4.0);
  // 3 degrees of freedom, p = 0.001.
  EXPECT_LT(chi2, 16.27);
}

TEST(Tabular, BundledHpolibDescriptorValidates) {
  const auto d = load_descriptor(std::filesystem::path(MFSIM_SOURCE_DIR) / "data/spaces/hpolib.json");
  std::size_t ordinal = 0, categorical = 0;
  for (const auto& dim : d.space.dimensions()) {
    ordinal += dim.kind() == "ordinal";
    categorical += dim.kind() == "categorical";
  }
  EXPECT_EQ(ordinal, 6u);
  EXPECT_EQ(categorical, 3u);
  ASSERT_EQ(d.fidelities.size(), 1u);
  EXPECT_EQ(d.fidelities[0].name, "epoch");
  EXPECT_TRUE(d.fidelities[0].contains(1.0));
  EXPECT_TRUE(d.fidelities[0].contains(100.0));
  EXPECT_FALSE(d.fidelities[0].contains(101.0));
  EXPECT_EQ(d.seeds.size(), 4u);
}

TEST(Tabular, BenchmarkObjectiveUsesExperimentSeedStream) {
  auto table = std::make_shared<TabularTable>(toy_descriptor(), "runtime");
  const ConfigPoint a{{"lr", 0.01}, {"act", std::string("relu")}};
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    table->insert(a, seed, {{"epoch", 2}}, {{"loss", static_cast<double>(seed)}, {"runtime", 1}});
  const TabularBenchmark bench(table);
  ExperimentSettings s;
  s.fidel_keys = {"epoch"};
  s.seed = 9;
  s.n_actual_evals_in_opt = 105;
  const BenchmarkObjective objective(bench, s);
  const QueryArgs args{FidelityAssignment{{"epoch", 2}}, std::nullopt};
  for (std::size_t ask = 0; ask < 50; ++ask) EXPECT_EQ(objective(a, args, ask).objectives, objective(a, args, ask).objectives);
}
