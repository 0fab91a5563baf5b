#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "iclb/active.hpp"
#include "iclb/backends/mock.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace iclb;

namespace {

DecisionMap flat_map(int g, double h) {
  DecisionMap m;
  m.grid = make_grid({0, 0}, {1, 1}, g);
  m.label_names = {"Foo", "Bar"};
  m.labels.assign(m.grid.size(), 0);
  m.entropy.emplace(m.grid.size(), h);
  return m;
}

std::vector<bool> abstain_mask(const DecisionMap& m) {
  std::vector<bool> b(m.labels.size());
  for (std::size_t c = 0; c < b.size(); ++c) b[c] = m.labels[c] == kAbstain;
  return b;
}

}  // namespace

TEST(SelectUncertain, PicksSpikeFirst) {
  DecisionMap m = flat_map(10, 0.1);
  (*m.entropy)[57] = 0.69;
  const Selection s = select_uncertain(m, 1, 2.0);
  ASSERT_EQ(s.cells.size(), 1u);
  EXPECT_EQ(s.cells[0], 57u);
  EXPECT_DOUBLE_EQ(s.entropies[0], 0.69);
}

TEST(SelectUncertain, TiesResolveRowMajorWithSpacing) {
  const DecisionMap m = flat_map(5, 0.5);
  const Selection s = select_uncertain(m, 4, 2.0);
  // Row 0 gives cells 0, 2, 4; the next admissible cell is (0, 2) = 10.
  EXPECT_EQ(s.cells, (std::vector<std::size_t>{0, 2, 4, 10}));
  EXPECT_FALSE(s.exhausted);
}

TEST(SelectUncertain, MatchesBruteForceOnRandomFields) {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    DecisionMap m = scenario::entropy_field(rng, 20, trial % 2 == 1);
    if (trial % 5 == 0) {
      for (int a = 0; a < 15; ++a) m.labels[uniform_index(rng, m.labels.size())] = kAbstain;
    }
    const int k = 1 + static_cast<int>(uniform_index(rng, 40));
    const double sep = std::vector<double>{0.0, 1.0, 1.5, 2.0, 3.0}[uniform_index(rng, 5)];
    const Selection s = select_uncertain(m, k, sep);
    EXPECT_EQ(s.cells, oracle::brute_force_greedy(*m.entropy, abstain_mask(m), 20, k, sep)) << "trial " << trial;
  }
}

TEST(SelectUncertain, RespectsSpacing) {
  Rng rng(7);
  const DecisionMap m = scenario::entropy_field(rng, 30, false);
  const Selection s = select_uncertain(m, 60, 3.0);
  for (std::size_t a = 0; a < s.cells.size(); ++a) {
    for (std::size_t b = a + 1; b < s.cells.size(); ++b) {
      EXPECT_GE(grid_distance(m.grid, s.cells[a], s.cells[b]), 3.0);
    }
  }
}

TEST(SelectUncertain, ReportsExhaustion) {
  const DecisionMap m = flat_map(4, 0.3);
  const Selection s = select_uncertain(m, 10, 3.0);
  EXPECT_TRUE(s.exhausted);
  EXPECT_LT(s.cells.size(), 10u);
}

TEST(SelectUncertain, SkipsAbstainCells) {
  DecisionMap m = flat_map(6, 0.1);
  (*m.entropy)[8] = 0.7;
  m.labels[8] = kAbstain;
  const Selection s = select_uncertain(m, 1, 0.0);
  EXPECT_EQ(s.cells, (std::vector<std::size_t>{0}));
}

TEST(SelectUncertain, RequiresEntropy) {
  DecisionMap m = flat_map(4, 0.1);
  m.entropy.reset();
  EXPECT_CODE(select_uncertain(m, 2, 1.0), no_uncertainty_signal);
  EXPECT_CODE(select_uncertain(flat_map(4, 0.1), 0, 1.0), param);
}

TEST(SelectRandom, DistinctAndDeterministic) {
  const DecisionMap m = flat_map(10, 0.2);
  Rng a(5), b(5);
  const Selection s1 = select_random(m, 30, a);
  const Selection s2 = select_random(m, 30, b);
  EXPECT_EQ(s1.cells, s2.cells);
  std::set<std::size_t> uniq(s1.cells.begin(), s1.cells.end());
  EXPECT_EQ(uniq.size(), 30u);
}

TEST(Oracle, FitsLinearTaskPerfectly) {
  TaskSpec s;
  s.class_sep = 1.5;
  s.seed = 3;
  const Oracle o = train_oracle(s, 1024, 3);
  EXPECT_DOUBLE_EQ(o.train_accuracy, 1.0);
  EXPECT_TRUE(o.warnings.empty());
  EXPECT_EQ(o.predict({-1.5, -1.5}), o.predict({-3.0, -3.0}));
  EXPECT_NE(o.predict({-3.0, -3.0}), o.predict({3.0, 3.0}));
}

TEST(ActiveConfig, ValidatesAndRoundTrips) {
  ActiveConfig c;
  EXPECT_NO_THROW(c.validate());
  c.schedule = {32, 32};
  EXPECT_CODE(c.validate(), config);
  c.schedule = {};
  EXPECT_CODE(c.validate(), config);
  c = ActiveConfig{};
  c.min_separation = -1;
  EXPECT_CODE(c.validate(), config);
  c = ActiveConfig{};
  c.schedule = {16, 40};
  c.policy = Policy::random;
  c.seed = 99;
  const ActiveConfig back = nlohmann::json(c).get<ActiveConfig>();
  EXPECT_EQ(back.schedule, c.schedule);
  EXPECT_EQ(back.policy, Policy::random);
  EXPECT_EQ(back.seed, 99u);
}

class ActiveLoop : public ::testing::Test {
 protected:
  static ActiveConfig small(Policy p) {
    ActiveConfig c;
    c.schedule = {16, 24, 32};
    c.grid_G = 24;
    c.policy = p;
    c.seed = 11;
    return c;
  }
};

TEST_F(ActiveLoop, SelectsOnOracleBoundary) {
  const auto bc = scenario::boundary_case(4, 16);
  const Trajectory t = run_loop(*bc.backend, bc.task, bc.prompt, small(Policy::active), bc.oracle);
  ASSERT_EQ(t.steps.size(), 3u);
  std::size_t n = 0;
  for (const Step& s : t.steps) {
    for (const auto& p : s.selected) {
      EXPECT_LE(bc.cells_from_boundary(s.map.grid, p.cell), 1.0);
      EXPECT_EQ(p.point.label, bc.oracle.predict(p.point.raw));
      ++n;
    }
  }
  EXPECT_EQ(n, 16u);
}

TEST_F(ActiveLoop, ScheduleSizes) {
  const auto bc = scenario::boundary_case(5, 16);
  const Trajectory t = run_loop(*bc.backend, bc.task, bc.prompt, small(Policy::active), bc.oracle);
  ASSERT_EQ(t.steps.size(), 3u);
  EXPECT_EQ(t.steps[0].context.size(), 16u);
  EXPECT_EQ(t.steps[1].context.size(), 24u);
  EXPECT_EQ(t.steps[2].context.size(), 32u);
  EXPECT_TRUE(t.steps[2].selected.empty());
  for (const Step& s : t.steps) EXPECT_EQ(s.map.grid.G, t.steps[0].map.grid.G);
  EXPECT_EQ(t.steps[0].map.grid.x_min, t.steps[2].map.grid.x_min);
}

TEST_F(ActiveLoop, RandomPolicyIsDeterministic) {
  const auto bc = scenario::boundary_case(6, 16);
  const Trajectory a = run_loop(*bc.backend, bc.task, bc.prompt, small(Policy::random), bc.oracle);
  const Trajectory b = run_loop(*bc.backend, bc.task, bc.prompt, small(Policy::random), bc.oracle);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].context, b.steps[i].context);
}

TEST_F(ActiveLoop, RejectsMismatchedStart) {
  const auto bc = scenario::boundary_case(7, 20);
  EXPECT_CODE(run_loop(*bc.backend, bc.task, bc.prompt, small(Policy::active), bc.oracle), size);
}

TEST_F(ActiveLoop, GenerationModeHasNoUncertainty) {
  auto bc = scenario::boundary_case(8, 16);
  MockBackend::Options o;
  o.mode = ProbeMode::generation;
  const MockBackend gen([](const ParsedPrompt&, int k) { return std::vector<double>(static_cast<std::size_t>(k), 0.0); },
                        o);
  try {
    run_loop(gen, bc.task, bc.prompt, small(Policy::active), bc.oracle);
    FAIL() << "expected an error";
  } catch (const ActiveLoopError& e) {
    EXPECT_EQ(e.code(), ErrorCode::no_uncertainty_signal);
    EXPECT_EQ(e.partial().steps.size(), 0u);
  }
  EXPECT_NO_THROW(run_loop(gen, bc.task, bc.prompt, small(Policy::random), bc.oracle));
}

TEST_F(ActiveLoop, WritesTrajectory) {
  const auto bc = scenario::boundary_case(9, 16);
  const Trajectory t = run_loop(*bc.backend, bc.task, bc.prompt, small(Policy::active), bc.oracle);
  const auto dir = std::filesystem::temp_directory_path() / "iclb_active_traj";
  std::filesystem::remove_all(dir);
  write_trajectory(dir, t);
  for (int s = 0; s < 3; ++s) EXPECT_TRUE(std::filesystem::exists(dir / ("step_" + std::to_string(s) + ".map.csv")));
  std::ifstream is(dir / "manifest.json");
  const auto j = nlohmann::json::parse(is);
  EXPECT_EQ(j.at("steps").size(), 3u);
  EXPECT_EQ(j.at("steps")[1].at("context_size"), 24);
  EXPECT_EQ(j.at("steps")[0].at("selected").size(), 8u);
  std::ifstream ms(dir / "step_1.map.csv");
  const DecisionMap back = map_io::read(ms);
  EXPECT_EQ(back.labels, t.steps[1].map.labels);
  std::filesystem::remove_all(dir);
}
