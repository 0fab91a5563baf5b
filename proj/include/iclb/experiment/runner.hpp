#pragma once

// Sweep execution: (task x seed, backend, prompt variant, n_context) with a
// shared response cache and an append-only JSONL ledger of RunRecords.

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "iclb/backends/cache.hpp"
#include "iclb/experiment/config.hpp"
#include "iclb/experiment/render.hpp"
#include "iclb/metrics.hpp"
#include "iclb/probe.hpp"

namespace iclb::experiment {

/// Append-only JSONL ledger. Unparseable lines are skipped on read.
class Ledger {
 public:
  explicit Ledger(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const json& record) {
    std::lock_guard lock(mu_);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream os(path_, std::ios::app | std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::io, "cannot append to ledger " + path_.string());
    os << record.dump() << '\n';
  }

  std::vector<json> read() const { return read_file(path_); }

  static std::vector<json> read_file(const std::filesystem::path& path) {
    std::vector<json> out;
    std::ifstream in(path, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        out.push_back(json::parse(line));
      } catch (const json::exception&) {
      }
    }
    return out;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

/// The task instance a run sees: generated, scaled to prompt space and split
/// with the largest context size so that smaller sizes are nested prefixes.
inline TaskInstance prepare_task(const ExperimentConfig& cfg, const TaskEntry& entry, std::uint64_t seed) {
  TaskInstance t = generate(entry.for_seed(seed));
  if (cfg.prompt_space.enabled) {
    t = scale_to_prompt_space(std::move(t), cfg.prompt_space.lo, cfg.prompt_space.hi, cfg.prompt_space.integer_mode);
  }
  const int n_max = *std::max_element(cfg.n_context.begin(), cfg.n_context.end());
  return split_balanced(std::move(t), n_max, cfg.n_test, seed);
}

inline std::string file_stem(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
  return out;
}

struct RunKey {
  std::string task_fingerprint;
  std::string backend_fingerprint;
  std::string prompt_fingerprint;
  int n_context = 0;
  int grid_G = 50;

  std::string fingerprint() const {
    return Fingerprint{}
        .add(task_fingerprint)
        .add(backend_fingerprint)
        .add(prompt_fingerprint)
        .add(static_cast<std::int64_t>(n_context))
        .add(static_cast<std::int64_t>(grid_G))
        .hex();
  }
};

struct SweepSummary {
  std::vector<json> records;  // newly appended
  int skipped = 0;
  int failed = 0;
  int planned = 0;
};

class Runner {
 public:
  using Progress = std::function<void(const json&)>;
  using Factory = std::function<BackendPtr(const BackendEntry&, std::uint64_t)>;

  explicit Runner(ExperimentConfig cfg) : cfg_(std::move(cfg)), ledger_(cfg_.outputs / "ledger.jsonl") {
    if (cfg_.cache) cache_ = std::make_shared<ResponseCache>(*cfg_.cache);
  }

  const ExperimentConfig& config() const { return cfg_; }
  const std::shared_ptr<ResponseCache>& cache() const { return cache_; }
  /// Replaces build_backend, e.g. to observe the instances a sweep uses.
  void set_factory(Factory f) { factory_ = std::move(f); }
  Ledger& ledger() { return ledger_; }

  /// The backend as runs see it: built for the task seed, behind the cache.
  BackendPtr backend_for(const BackendEntry& e, std::uint64_t task_seed) const {
    BackendPtr b = factory_ ? factory_(e, task_seed) : build_backend(e, task_seed);
    if (cache_) b = cached(std::move(b), cache_);
    return b;
  }

  SweepSummary run(const Progress& progress = {}) {
    std::set<std::string> done;
    for (const auto& r : ledger_.read()) {
      if (r.value("status", "") == "ok") done.insert(r.value("run_fingerprint", ""));
    }
    std::set<std::string> unavailable;  // backends that failed a reachability check this sweep
    SweepSummary summary;
    const auto maps_dir = cfg_.outputs / "maps";
    const auto svg_dir = cfg_.outputs / "svg";
    std::filesystem::create_directories(maps_dir);
    std::filesystem::create_directories(svg_dir);

    for (const auto& task : cfg_.tasks) {
      for (std::uint64_t seed : task.seeds) {
        const TaskInstance full = prepare_task(cfg_, task, seed);
        const std::string task_fp = task_fingerprint(full);
        const auto test = full.test_points();
        for (const auto& be : cfg_.backends) {
          const BackendPtr backend = backend_for(be, seed);
          for (const auto& pv : cfg_.prompts) {
            for (int n : cfg_.n_context) {
              ++summary.planned;
              const RunKey key{task_fp, backend->fingerprint(), prompt_fingerprint(pv.prompt), n, cfg_.grid_G};
              const std::string run_fp = key.fingerprint();
              if (done.count(run_fp)) {
                ++summary.skipped;
                continue;
              }
              json rec = {{"config_fingerprint", cfg_.fingerprint()},
                          {"run_fingerprint", run_fp},
                          {"task", task.name},
                          {"task_kind", task.spec.kind},
                          {"task_seed", seed},
                          {"task_fingerprint", task_fp},
                          {"backend", be.name},
                          {"backend_fingerprint", key.backend_fingerprint},
                          {"prompt", pv.name},
                          {"prompt_fingerprint", key.prompt_fingerprint},
                          {"labels", pv.prompt.labels},
                          {"ordering_seed", pv.prompt.ordering_seed ? json(*pv.prompt.ordering_seed) : json()},
                          {"n_context", n},
                          {"grid_G", cfg_.grid_G}};
              const std::string stem = file_stem(task.name + "-s" + std::to_string(seed) + "_" + be.name + "_" +
                                                 pv.name + "_n" + std::to_string(n)) +
                                       "_" + run_fp.substr(0, 8);
              if (unavailable.count(be.name)) {
                rec["status"] = "failed";
                rec["error"] = to_string(ErrorCode::backend_unavailable);
                rec["message"] = "backend unreachable earlier in this sweep";
              } else {
                execute(*backend, full, test, pv, n, rec, maps_dir / (stem + ".map.csv"), svg_dir / (stem + ".svg"));
                if (rec.value("error", "") == to_string(ErrorCode::backend_unavailable)) unavailable.insert(be.name);
              }
              if (rec["status"] != "ok") ++summary.failed;
              ledger_.append(rec);
              if (progress) progress(rec);
              summary.records.push_back(std::move(rec));
            }
          }
        }
      }
    }
    return summary;
  }

 private:
  void execute(const Backend& backend, const TaskInstance& full, const std::vector<LabeledPoint>& test,
               const PromptVariant& pv, int n, json& rec, const std::filesystem::path& map_path,
               const std::filesystem::path& svg_path) const {
    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    try {
      std::vector<LabeledPoint> examples = take_context_prefix(full, n).context_points();
      if (pv.prompt.ordering_seed) examples = permute_context(std::move(examples), *pv.prompt.ordering_seed);
      const ProbeContext ctx = ProbeContext::make(examples, pv.prompt, full.scale);
      const GridSpec grid = build_grid(ctx.examples, cfg_.grid_G);
      rec["context_fingerprint"] = ctx.fingerprint();

      preflight(backend, ctx, grid);

      DecisionMap map;
      try {
        map = probe_map(backend, ctx, grid);
      } catch (const ProbeDegraded& e) {
        write_outputs(e.partial(), ctx, std::nullopt, rec, map_path, svg_path);
        throw;
      }
      std::optional<double> acc;
      if (!test.empty()) acc = test_accuracy(backend, ctx, test);
      write_outputs(map, ctx, acc, rec, map_path, svg_path);
      rec["test_accuracy"] = acc ? json(*acc) : json();
      rec["status"] = "ok";
    } catch (const Error& e) {
      rec["status"] = "failed";
      rec["error"] = to_string(e.code());
      rec["message"] = e.what();
    }
    rec["wall_seconds"] = elapsed();
  }

  void write_outputs(const DecisionMap& map, const ProbeContext& ctx, std::optional<double> acc, json& rec,
                     const std::filesystem::path& map_path, const std::filesystem::path& svg_path) const {
    {
      std::ofstream os(map_path, std::ios::binary);
      require(static_cast<bool>(os), ErrorCode::io, "cannot write " + map_path.string());
      map_io::write(os, map);
    }
    MapStyle style;
    style.context = ctx.examples;
    style.accuracy = acc;
    style.title = rec.value("backend", "") + "  n=" + std::to_string(rec.value("n_context", 0));
    {
      std::ofstream os(svg_path, std::ios::binary);
      require(static_cast<bool>(os), ErrorCode::io, "cannot write " + svg_path.string());
      os << render_map(map, style);
    }
    rec["map_file"] = std::filesystem::relative(map_path, cfg_.outputs).generic_string();
    rec["svg_file"] = std::filesystem::relative(svg_path, cfg_.outputs).generic_string();
    rec["metrics"] = map_metrics(map);
    rec["abstain_count"] = map.abstain_count();
  }

  ExperimentConfig cfg_;
  Ledger ledger_;
  std::shared_ptr<ResponseCache> cache_;
  Factory factory_;
};

}  // namespace iclb::experiment
