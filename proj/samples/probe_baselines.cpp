// Probes every classical baseline on one linear task and prints map metrics.

#include <cstdio>

#include "iclb/baselines/model.hpp"
#include "iclb/metrics.hpp"
#include "iclb/probe.hpp"
#include "iclb/taskgen.hpp"

int main() {
  using namespace iclb;
  TaskSpec spec;
  spec.kind = TaskKind::linear;
  spec.seed = 7;
  const TaskInstance task = split_balanced(scale_to_prompt_space(generate(spec)), 128, 100, spec.seed);
  const ProbeContext ctx = ProbeContext::make(task.context_points(), PromptConfig{}, task.scale);
  const GridSpec grid = build_grid(ctx.examples, 50);

  for (const char* name : {"logreg", "knn", "dtree", "mlp", "svm", "svm-poly"}) {
    const BaselineBackend backend(baselines::classifier_from_name(name), spec.seed);
    const DecisionMap map = probe_map(backend, ctx, grid);
    const double acc = test_accuracy(backend, ctx, task.test_points());
    std::printf("%-9s acc=%.3f fragmentation=%.4f regions=%d\n", name, acc, fragmentation(map), region_count(map));
  }
}
