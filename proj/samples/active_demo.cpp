// Active versus random context growth against the nearest-centroid mock.

#include <cstdio>

#include "iclb/active.hpp"
#include "iclb/backends/mock.hpp"

int main() {
  using namespace iclb;
  TaskSpec spec;
  spec.kind = TaskKind::linear;
  spec.seed = 3;
  const TaskInstance task = split_balanced(scale_to_prompt_space(generate(spec)), 32, 100, spec.seed);
  const Oracle oracle = train_oracle(spec, 1024, spec.seed);
  const MockBackend backend(mock_scripts::nearest_centroid(15.0), {});

  for (Policy policy : {Policy::active, Policy::random}) {
    ActiveConfig cfg;
    cfg.schedule = {32, 48, 64};
    cfg.policy = policy;
    cfg.grid_G = 30;
    const Trajectory traj = run_loop(backend, task, PromptConfig{}, cfg, oracle);
    for (const auto& step : traj.steps) {
      std::printf("%-6s n=%3zu acc=%.3f fragmentation=%.4f\n", policy == Policy::active ? "active" : "random",
                  step.context.size(), step.test_accuracy, fragmentation(step.map));
    }
  }
}
