// Command-line front end: gen, probe, sweep, active, render, report.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "iclb/active.hpp"
#include "iclb/experiment/config.hpp"
#include "iclb/experiment/render.hpp"
#include "iclb/experiment/report.hpp"
#include "iclb/experiment/runner.hpp"

namespace fs = std::filesystem;
using namespace iclb;
using namespace iclb::experiment;

namespace {

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::config: return 2;
    case ErrorCode::backend_unavailable: return 3;
    case ErrorCode::probe_degraded: return 4;
    default: return 1;
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string backend;
  int grid = 50;
  std::optional<int> n_context;
  std::string labels;
  std::optional<std::uint64_t> order_seed;
  std::string mode;
  std::string kind = "linear";
  int n_test = 100;
  std::string task_file;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (TOML or JSON)");
  app->add_option("--seed", c.seed, "Master / task seed");
  app->add_option("--out", c.out, "Output path");
  app->add_option("--backend", c.backend,
                  "Backend name from the config, or mock:<script>, baseline:<model>, numeric:<url>, "
                  "completion:<url>@<model>");
  app->add_option("--grid", c.grid, "Grid resolution G")->check(CLI::Range(2, 1000));
  app->add_option("--n-context", c.n_context, "Number of in-context examples");
  app->add_option("--labels", c.labels, "Comma-separated label strings, e.g. Foo,Bar");
  app->add_option("--order-seed", c.order_seed, "Context ordering seed");
  app->add_option("--mode", c.mode, "logprob or generation")->check(CLI::IsMember({"logprob", "generation"}));
}

std::vector<std::string> split_labels(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

/// Backend entry from --backend: a config name, or an inline type:arg form.
BackendEntry resolve_backend(const Common& c, const std::optional<ExperimentConfig>& cfg) {
  if (cfg) {
    if (c.backend.empty()) return cfg->backends.front();
    if (const auto* b = cfg->backend(c.backend)) return *b;
  }
  const std::string spec = c.backend.empty() ? "mock:nearest_centroid" : c.backend;
  const auto colon = spec.find(':');
  require(colon != std::string::npos, ErrorCode::config, "unknown backend '" + spec + "'");
  BackendEntry e;
  e.type = spec.substr(0, colon);
  e.name = spec;
  const std::string arg = spec.substr(colon + 1);
  e.params = {{"type", e.type}};
  if (!c.mode.empty()) e.params["mode"] = c.mode;
  if (e.type == "mock") {
    e.params["script"] = arg;
  } else if (e.type == "baseline") {
    baselines::classifier_from_name(arg);
    e.params["model"] = arg;
  } else if (e.type == "numeric") {
    e.params["endpoint"] = arg;
  } else if (e.type == "completion") {
    const auto at = arg.rfind('@');
    require(at != std::string::npos, ErrorCode::config, "completion backend needs <url>@<model>");
    e.params["endpoint"] = arg.substr(0, at);
    e.params["model"] = arg.substr(at + 1);
  } else {
    fail(ErrorCode::config, "unknown backend type '" + e.type + "'");
  }
  return e;
}

std::optional<ExperimentConfig> maybe_config(const Common& c) {
  if (c.config.empty()) return std::nullopt;
  ExperimentConfig cfg = load_config(c.config);
  if (!c.out.empty()) {
    cfg.outputs = c.out;
    if (!cfg.source.contains("cache")) cfg.cache = cfg.outputs / "cache.jsonl";
  }
  return cfg;
}

PromptConfig prompt_from(const Common& c, const std::optional<ExperimentConfig>& cfg) {
  PromptConfig p = cfg ? cfg->prompts.front().prompt : PromptConfig{};
  if (!c.labels.empty()) p.labels = split_labels(c.labels);
  if (c.order_seed) p.ordering_seed = c.order_seed;
  make_label_map(p);
  return p;
}

/// A split task either from --task file, the config's first task, or --kind.
TaskInstance task_from(const Common& c, const std::optional<ExperimentConfig>& cfg, int n_context, int n_test) {
  if (!c.task_file.empty()) {
    std::ifstream in(c.task_file);
    require(static_cast<bool>(in), ErrorCode::io, "cannot read " + c.task_file);
    TaskInstance t = task_from_json(json::parse(in));
    return t.context.size() == static_cast<std::size_t>(n_context) ? t : take_context_prefix(t, n_context);
  }
  const std::uint64_t seed = c.seed.value_or(0);
  TaskInstance t;
  if (cfg) {
    t = generate(cfg->tasks.front().for_seed(c.seed.value_or(cfg->tasks.front().seeds.front())));
    if (cfg->prompt_space.enabled) {
      t = scale_to_prompt_space(std::move(t), cfg->prompt_space.lo, cfg->prompt_space.hi, cfg->prompt_space.integer_mode);
    }
  } else {
    TaskSpec s;
    s.kind = json(c.kind).get<TaskKind>();
    s.seed = seed;
    t = scale_to_prompt_space(generate(s));
  }
  const std::uint64_t split_seed = t.spec.seed;
  return split_balanced(std::move(t), n_context, n_test, split_seed);
}

void write_file(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::io, "cannot write " + p.string());
  os << s;
}

int cmd_gen(const Common& c) {
  const auto cfg = maybe_config(c);
  const fs::path out = c.out.empty() ? fs::path("tasks") : fs::path(c.out);
  const int n = c.n_context.value_or(cfg ? *std::max_element(cfg->n_context.begin(), cfg->n_context.end()) : 128);
  if (cfg) {
    for (const auto& task : cfg->tasks) {
      for (std::uint64_t seed : task.seeds) {
        const TaskInstance t = prepare_task(*cfg, task, seed);
        const fs::path p = out / (file_stem(task.name) + "-s" + std::to_string(seed) + ".json");
        write_file(p, task_to_json(t).dump(1) + "\n");
        std::cout << p.string() << "\n";
      }
    }
    return 0;
  }
  const TaskInstance t = task_from(c, cfg, n, c.n_test);
  const fs::path p = out / (c.kind + "-s" + std::to_string(c.seed.value_or(0)) + ".json");
  write_file(p, task_to_json(t).dump(1) + "\n");
  std::cout << p.string() << "\n";
  return 0;
}

int cmd_probe(const Common& c) {
  const auto cfg = maybe_config(c);
  const int n = c.n_context.value_or(cfg ? cfg->n_context.front() : 32);
  const int n_test = cfg ? cfg->n_test : c.n_test;
  const TaskInstance task = task_from(c, cfg, n, n_test);
  const PromptConfig prompt = prompt_from(c, cfg);
  const BackendEntry be = resolve_backend(c, cfg);
  BackendPtr backend = build_backend(be, task.spec.seed);
  if (cfg && cfg->cache) backend = cached(backend, std::make_shared<ResponseCache>(*cfg->cache));

  std::vector<LabeledPoint> examples = task.context_points();
  if (prompt.ordering_seed) examples = permute_context(std::move(examples), *prompt.ordering_seed);
  const ProbeContext ctx = ProbeContext::make(examples, prompt, task.scale);
  const int G = cfg && c.grid == 50 ? cfg->grid_G : c.grid;
  const GridSpec grid = build_grid(ctx.examples, G);
  const fs::path stem = c.out.empty() ? fs::path("probe") : fs::path(c.out);

  auto emit = [&](const DecisionMap& m, std::optional<double> acc) {
    write_file(stem.string() + ".map.csv", map_io::to_string(m));
    MapStyle style;
    style.context = ctx.examples;
    style.accuracy = acc;
    style.title = be.name + "  n=" + std::to_string(n);
    write_file(stem.string() + ".svg", render_map(m, style));
  };
  preflight(*backend, ctx, grid);
  try {
    const DecisionMap m = probe_map(*backend, ctx, grid);
    const auto test = task.test_points();
    std::optional<double> acc;
    if (!test.empty()) acc = test_accuracy(*backend, ctx, test);
    emit(m, acc);
    const MapMetrics mm = map_metrics(m);
    std::cout << json{{"map", stem.string() + ".map.csv"},
                      {"svg", stem.string() + ".svg"},
                      {"test_accuracy", acc ? json(*acc) : json()},
                      {"metrics", mm}}
                     .dump()
              << "\n";
  } catch (const ProbeDegraded& e) {
    emit(e.partial(), std::nullopt);
    throw;
  }
  return 0;
}

int cmd_sweep(const Common& c) {
  require(!c.config.empty(), ErrorCode::config, "sweep needs --config");
  ExperimentConfig cfg = *maybe_config(c);
  if (c.grid != 50) cfg.grid_G = c.grid;
  Runner runner(cfg);
  const SweepSummary s = runner.run([](const json& r) {
    std::cerr << r.value("status", "") << "  " << r.value("task", "") << " seed=" << r.value("task_seed", 0)
              << " backend=" << r.value("backend", "") << " prompt=" << r.value("prompt", "")
              << " n=" << r.value("n_context", 0);
    if (r.contains("test_accuracy") && !r.at("test_accuracy").is_null()) {
      std::cerr << " acc=" << r.at("test_accuracy").get<double>();
    }
    if (r.contains("message")) std::cerr << "  " << r.at("message").get<std::string>();
    std::cerr << "\n";
  });
  const auto all = runner.ledger().read();
  if (!all.empty()) {
    const auto figs = write_curves(all, cfg.outputs);
    write_file(cfg.outputs / "report.md", report(all, cfg.outputs, figs));
  }
  std::cout << json{{"planned", s.planned},
                    {"executed", s.records.size()},
                    {"skipped", s.skipped},
                    {"failed", s.failed},
                    {"upstream_cache_entries", runner.cache() ? runner.cache()->size() : 0},
                    {"ledger", runner.ledger().path().string()}}
                   .dump()
            << "\n";
  int code = 0;
  for (const auto& r : s.records) {
    const std::string e = r.value("error", "");
    if (e == to_string(ErrorCode::backend_unavailable)) code = 3;
    else if (e == to_string(ErrorCode::probe_degraded) && code == 0) code = 4;
  }
  return code;
}

int cmd_active(const Common& c, const std::string& policy) {
  const auto cfg = maybe_config(c);
  ActiveConfig ac = cfg && cfg->active ? *cfg->active : ActiveConfig{};
  if (!policy.empty()) ac.policy = json(policy).get<Policy>();
  if (c.seed) ac.seed = *c.seed;
  if (c.grid != 50 || !cfg) ac.grid_G = c.grid;
  ac.validate();
  const int n_test = cfg ? cfg->n_test : c.n_test;
  const TaskInstance task = task_from(c, cfg, ac.schedule.front(), n_test);
  const PromptConfig prompt = prompt_from(c, cfg);
  const BackendEntry be = resolve_backend(c, cfg);
  BackendPtr backend = build_backend(be, task.spec.seed);
  if (cfg && cfg->cache) backend = cached(backend, std::make_shared<ResponseCache>(*cfg->cache));
  const Oracle oracle = train_oracle(task.spec, ac.oracle_train_size, task.spec.seed);
  const fs::path out = c.out.empty() ? fs::path("active") : fs::path(c.out);
  preflight(*backend, ProbeContext::make(task.context_points(), prompt, task.scale),
            build_grid(task.context_points(), ac.grid_G));
  try {
    const Trajectory traj = run_loop(*backend, task, prompt, ac, oracle);
    write_trajectory(out, traj);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      MapStyle style;
      style.context = traj.steps[t].context;
      style.accuracy = traj.steps[t].test_accuracy;
      style.title = "n=" + std::to_string(traj.steps[t].context.size());
      write_file(out / ("step_" + std::to_string(t) + ".svg"), render_map(traj.steps[t].map, style));
    }
    std::cout << trajectory_manifest(traj).dump() << "\n";
  } catch (const ActiveLoopError& e) {
    write_trajectory(out, e.partial());
    throw;
  }
  return 0;
}

int cmd_render(const std::string& map_file, const std::string& task_file, const std::string& out) {
  std::ifstream in(map_file, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + map_file);
  const DecisionMap m = map_io::read(in);
  MapStyle style;
  if (!task_file.empty()) {
    std::ifstream t(task_file);
    require(static_cast<bool>(t), ErrorCode::io, "cannot read " + task_file);
    style.context = task_from_json(json::parse(t)).context_points();
  }
  const fs::path target = out.empty() ? fs::path(map_file).replace_extension("").replace_extension(".svg") : fs::path(out);
  write_file(target, render_map(m, style));
  std::cout << target.string() << "\n";
  return 0;
}

int cmd_report(const Common& c) {
  fs::path dir = c.out;
  if (dir.empty() && !c.config.empty()) dir = maybe_config(c)->outputs;
  if (dir.empty()) dir = "out";
  const auto records = Ledger::read_file(dir / "ledger.jsonl");
  require(!records.empty(), ErrorCode::empty_ledger, "no records in " + (dir / "ledger.jsonl").string());
  const auto figs = write_curves(records, dir);
  const std::string md = report(records, dir, figs);
  write_file(dir / "report.md", md);
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-boundary probing harness for in-context classifiers"};
  app.require_subcommand(1);
  Common c;
  std::string policy, map_file;

  auto* gen = app.add_subcommand("gen", "Emit split task files");
  add_common(gen, c);
  gen->add_option("--kind", c.kind, "linear, circle or moon")->check(CLI::IsMember({"linear", "circle", "moon"}));
  gen->add_option("--n-test", c.n_test, "Held-out test points");

  auto* probe = app.add_subcommand("probe", "Probe one decision map");
  add_common(probe, c);
  probe->add_option("--task", c.task_file, "Task file from `gen`");
  probe->add_option("--kind", c.kind, "linear, circle or moon")->check(CLI::IsMember({"linear", "circle", "moon"}));
  probe->add_option("--n-test", c.n_test, "Held-out test points");

  auto* sweep = app.add_subcommand("sweep", "Run a full configured sweep");
  add_common(sweep, c);

  auto* active = app.add_subcommand("active", "Run the active-learning loop");
  add_common(active, c);
  active->add_option("--task", c.task_file, "Task file from `gen`");
  active->add_option("--kind", c.kind, "linear, circle or moon")->check(CLI::IsMember({"linear", "circle", "moon"}));
  active->add_option("--policy", policy, "active or random")->check(CLI::IsMember({"active", "random"}));
  active->add_option("--n-test", c.n_test, "Held-out test points");

  auto* render = app.add_subcommand("render", "Render a map file to SVG");
  add_common(render, c);
  render->add_option("--map", map_file, "Map file")->required();
  render->add_option("--task", c.task_file, "Task file for the context overlay");

  auto* rep = app.add_subcommand("report", "Summarize a sweep's ledger");
  add_common(rep, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(c);
    if (*probe) return cmd_probe(c);
    if (*sweep) return cmd_sweep(c);
    if (*active) return cmd_active(c, policy);
    if (*render) return cmd_render(map_file, c.task_file, c.out);
    if (*rep) return cmd_report(c);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
