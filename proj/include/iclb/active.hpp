#pragma once

// Uncertainty-driven context growth: probe, pick spread-out high-entropy
// cells, label them with a logistic-regression oracle, append, repeat.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "iclb/baselines/logreg.hpp"
#include "iclb/metrics.hpp"
#include "iclb/probe.hpp"
#include "iclb/promptfmt.hpp"
#include "iclb/rng.hpp"
#include "iclb/taskgen.hpp"

namespace iclb {

enum class Policy { active, random };

NLOHMANN_JSON_SERIALIZE_ENUM(Policy, {{Policy::active, "active"}, {Policy::random, "random"}})

struct ActiveConfig {
  std::vector<int> schedule{32, 64, 128, 256};
  double min_separation = 2.0;  // grid cells
  int oracle_train_size = 1024;
  Policy policy = Policy::active;
  std::uint64_t seed = 0;
  bool shuffle_each_step = false;
  int grid_G = 50;

  void validate() const {
    require(!schedule.empty(), ErrorCode::config, "active schedule is empty");
    require(schedule.front() >= 1, ErrorCode::config, "schedule sizes must be positive");
    for (std::size_t i = 1; i < schedule.size(); ++i) {
      require(schedule[i] > schedule[i - 1], ErrorCode::config, "active schedule must be strictly increasing");
    }
    require(min_separation >= 0.0 && std::isfinite(min_separation), ErrorCode::config,
            "min_separation must be a finite value >= 0");
    require(oracle_train_size >= 2, ErrorCode::config, "oracle_train_size must be at least 2");
    require(grid_G >= 2, ErrorCode::config, "grid_G must be at least 2");
  }
};

inline void to_json(nlohmann::json& j, const ActiveConfig& c) {
  j = nlohmann::json{{"schedule", c.schedule},         {"min_separation", c.min_separation},
                     {"oracle_train_size", c.oracle_train_size}, {"policy", c.policy},
                     {"seed", c.seed},                 {"shuffle_each_step", c.shuffle_each_step},
                     {"grid_G", c.grid_G}};
}

inline void from_json(const nlohmann::json& j, ActiveConfig& c) {
  ActiveConfig d;
  c.schedule = j.value("schedule", d.schedule);
  c.min_separation = j.value("min_separation", d.min_separation);
  c.oracle_train_size = j.value("oracle_train_size", d.oracle_train_size);
  c.policy = j.value("policy", d.policy);
  c.seed = j.value("seed", d.seed);
  c.shuffle_each_step = j.value("shuffle_each_step", d.shuffle_each_step);
  c.grid_G = j.value("grid_G", d.grid_G);
}

struct Oracle {
  baselines::LogisticRegression model;
  double train_accuracy = 0.0;
  std::vector<std::string> warnings;

  int predict(const Point& x) const { return model.predict(x); }
};

/// Logistic regression on `size` fresh samples of the task. The samples come
/// from a seed distinct from the task's own so they never coincide with it.
inline Oracle train_oracle(const TaskSpec& spec, int size, std::uint64_t seed) {
  TaskSpec fresh = spec;
  fresh.n_points = size;
  fresh.seed = substream_seed(seed, "oracle-data");
  const TaskInstance data = generate(fresh);
  Oracle o;
  o.model.fit(data.points, spec.num_classes);
  o.train_accuracy = o.model.accuracy(data.points);
  if (o.train_accuracy < 1.0) {
    o.warnings.push_back("oracle training accuracy " + std::to_string(o.train_accuracy) + " < 1");
  }
  return o;
}

struct Selection {
  std::vector<std::size_t> cells;
  std::vector<double> entropies;
  int requested = 0;
  bool exhausted = false;  // constraint ran out of candidates before `requested`
};

inline double grid_distance(const GridSpec& g, std::size_t a, std::size_t b) {
  const double di = g.col(a) - g.col(b);
  const double dj = g.row(a) - g.row(b);
  return std::sqrt(di * di + dj * dj);
}

/// Greedy highest-entropy selection under a minimum Euclidean grid-index
/// spacing. Entropy ties go to the lower row-major index.
inline Selection select_uncertain(const DecisionMap& map, int k, double min_separation) {
  require(map.entropy.has_value(), ErrorCode::no_uncertainty_signal,
          "map carries no entropy (hard-label or generation-mode backend)");
  require(k >= 1, ErrorCode::param, "k must be at least 1");
  require(min_separation >= 0.0, ErrorCode::param, "min_separation must be >= 0");
  const auto& h = *map.entropy;
  std::vector<std::size_t> order;
  order.reserve(h.size());
  for (std::size_t c = 0; c < h.size(); ++c) {
    if (map.labels[c] != kAbstain) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return h[a] > h[b]; });

  Selection s;
  s.requested = k;
  for (std::size_t c : order) {
    if (static_cast<int>(s.cells.size()) == k) break;
    const bool spaced = std::all_of(s.cells.begin(), s.cells.end(),
                                    [&](std::size_t o) { return grid_distance(map.grid, c, o) >= min_separation; });
    if (!spaced) continue;
    s.cells.push_back(c);
    s.entropies.push_back(h[c]);
  }
  s.exhausted = static_cast<int>(s.cells.size()) < k;
  return s;
}

/// k distinct cells uniformly at random (partial Fisher-Yates).
inline Selection select_random(const DecisionMap& map, int k, Rng& rng) {
  const std::size_t n = map.labels.size();
  std::vector<std::size_t> cells(n);
  for (std::size_t c = 0; c < n; ++c) cells[c] = c;
  Selection s;
  s.requested = k;
  const std::size_t take = std::min(n, static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(cells[i], cells[j]);
    s.cells.push_back(cells[i]);
    s.entropies.push_back(map.entropy ? (*map.entropy)[cells[i]] : std::numeric_limits<double>::quiet_NaN());
  }
  s.exhausted = take < static_cast<std::size_t>(k);
  return s;
}

struct SelectedPoint {
  std::size_t cell = 0;
  LabeledPoint point;
  double entropy = 0.0;  // NaN when the map has no entropy
};

struct Step {
  std::vector<LabeledPoint> context;
  DecisionMap map;
  double test_accuracy = 0.0;
  std::vector<SelectedPoint> selected;  // points added after this step's probe
  bool exhausted = false;
};

struct Trajectory {
  ActiveConfig config;
  double oracle_train_accuracy = 0.0;
  std::vector<Step> steps;
  std::vector<std::string> warnings;
};

class ActiveLoopError : public Error {
 public:
  ActiveLoopError(ErrorCode code, const std::string& what, Trajectory partial)
      : Error(code, what), partial_(std::move(partial)) {}
  const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

/// Runs the schedule starting from `task`'s context, which must hold exactly
/// schedule[0] points. The grid is fixed from the initial context.
inline Trajectory run_loop(const Backend& backend, const TaskInstance& task, const PromptConfig& prompt,
                           const ActiveConfig& cfg, const Oracle& oracle) {
  cfg.validate();
  std::vector<LabeledPoint> context = task.context_points();
  require(static_cast<int>(context.size()) == cfg.schedule.front(), ErrorCode::size,
          "initial context has " + std::to_string(context.size()) + " points, schedule starts at " +
              std::to_string(cfg.schedule.front()));
  const std::vector<LabeledPoint> test = task.test_points();
  const GridSpec grid = build_grid(context, cfg.grid_G);
  Rng random_rng = substream(cfg.seed, "random-sampling");

  Trajectory traj;
  traj.config = cfg;
  traj.oracle_train_accuracy = oracle.train_accuracy;
  traj.warnings = oracle.warnings;
  traj.warnings.insert(traj.warnings.end(), grid.warnings.begin(), grid.warnings.end());

  for (std::size_t t = 0; t < cfg.schedule.size(); ++t) {
    Step step;
    step.context = context;
    try {
      const ProbeContext ctx = ProbeContext::make(context, prompt, task.scale);
      step.map = probe_map(backend, ctx, grid);
      if (!test.empty()) step.test_accuracy = test_accuracy(backend, ctx, test);
      if (t + 1 < cfg.schedule.size()) {
        const int k = cfg.schedule[t + 1] - static_cast<int>(context.size());
        const Selection sel = cfg.policy == Policy::active ? select_uncertain(step.map, k, cfg.min_separation)
                                                           : select_random(step.map, k, random_rng);
        step.exhausted = sel.exhausted;
        for (std::size_t i = 0; i < sel.cells.size(); ++i) {
          const Point raw = grid.at(sel.cells[i]);
          const LabeledPoint p{raw, task.scale.apply(raw), oracle.predict(raw)};
          step.selected.push_back({sel.cells[i], p, sel.entropies[i]});
          context.push_back(p);
        }
        if (sel.exhausted) {
          traj.warnings.push_back("step " + std::to_string(t) + ": selected " + std::to_string(sel.cells.size()) +
                                  " of " + std::to_string(k) + " points");
        }
        if (cfg.shuffle_each_step) context = permute_context(std::move(context), cfg.seed + t + 1);
      }
    } catch (const ProbeDegraded& e) {
      step.map = e.partial();
      traj.steps.push_back(std::move(step));
      throw ActiveLoopError(e.code(), e.message(), std::move(traj));
    } catch (const Error& e) {
      throw ActiveLoopError(e.code(), e.message(), std::move(traj));
    }
    traj.steps.push_back(std::move(step));
  }
  return traj;
}

inline nlohmann::json trajectory_manifest(const Trajectory& traj) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const Step& s = traj.steps[t];
    nlohmann::json sel = nlohmann::json::array();
    for (const auto& p : s.selected) {
      sel.push_back({{"cell", p.cell}, {"x", p.point.raw}, {"label", p.point.label},
                     {"entropy", std::isnan(p.entropy) ? nlohmann::json() : nlohmann::json(p.entropy)}});
    }
    steps.push_back({{"step", t},
                     {"context_size", s.context.size()},
                     {"test_accuracy", s.test_accuracy},
                     {"fragmentation", fragmentation(s.map)},
                     {"map", "step_" + std::to_string(t) + ".map.csv"},
                     {"exhausted", s.exhausted},
                     {"selected", sel}});
  }
  return {{"config", traj.config},
          {"oracle_train_accuracy", traj.oracle_train_accuracy},
          {"warnings", traj.warnings},
          {"steps", steps}};
}

/// Writes step_<t>.map.csv per step and manifest.json.
inline void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    std::ofstream os(dir / ("step_" + std::to_string(t) + ".map.csv"), std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::io, "cannot write map file in " + dir.string());
    map_io::write(os, traj.steps[t].map);
  }
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::io, "cannot write manifest in " + dir.string());
  os << trajectory_manifest(traj).dump(2) << '\n';
}

}  // namespace iclb
