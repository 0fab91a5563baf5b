#pragma once

// Ledger aggregation: accuracy curves per backend and a markdown summary.

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "iclb/experiment/render.hpp"
#include "iclb/experiment/runner.hpp"
#include "iclb/metrics.hpp"
#include "iclb/probe.hpp"

namespace iclb::experiment {

inline bool is_ok(const json& r) { return r.value("status", "") == "ok"; }

/// Latest record per run fingerprint, in ledger order of first appearance.
inline std::vector<json> latest_records(const std::vector<json>& records) {
  std::map<std::string, std::size_t> index;
  std::vector<json> out;
  for (const auto& r : records) {
    const std::string fp = r.value("run_fingerprint", "");
    auto it = index.find(fp);
    if (it == index.end()) {
      index[fp] = out.size();
      out.push_back(r);
    } else if (is_ok(r) || !is_ok(out[it->second])) {
      out[it->second] = r;
    }
  }
  return out;
}

struct CurveSet {
  std::string task;
  std::map<std::string, std::vector<CurvePoint>> series;  // by backend (and prompt when several)
};

inline std::vector<CurveSet> curves_from_records(const std::vector<json>& records) {
  std::set<std::string> prompts;
  for (const auto& r : records) prompts.insert(r.value("prompt", ""));
  std::map<std::string, std::map<std::string, std::vector<AccuracySample>>> by_task;
  for (const auto& r : records) {
    if (!is_ok(r) || !r.contains("test_accuracy") || r.at("test_accuracy").is_null()) continue;
    std::string series = r.value("backend", "");
    if (prompts.size() > 1) series += "/" + r.value("prompt", "");
    by_task[r.value("task", "")][series].push_back({r.value("n_context", 0), r.at("test_accuracy").get<double>()});
  }
  std::vector<CurveSet> out;
  for (const auto& [task, series] : by_task) {
    CurveSet cs;
    cs.task = task;
    for (const auto& [name, samples] : series) cs.series[name] = accuracy_curve(samples);
    out.push_back(std::move(cs));
  }
  return out;
}

/// Writes curves_<task>.svg and curves_<task>_<series>.csv; returns the SVG paths.
inline std::vector<std::filesystem::path> write_curves(const std::vector<json>& records,
                                                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& cs : curves_from_records(latest_records(records))) {
    const CurveFigure fig = render_curves(cs.series, "test accuracy: " + cs.task);
    const auto svg = out_dir / ("curves_" + file_stem(cs.task) + ".svg");
    std::ofstream(svg, std::ios::binary) << fig.svg;
    for (const auto& [name, csv] : fig.csv) {
      std::ofstream(out_dir / ("curves_" + file_stem(cs.task) + "_" + file_stem(name) + ".csv"), std::ios::binary) << csv;
    }
    written.push_back(svg);
  }
  return written;
}

namespace detail {

inline std::string fmt(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::string str(int digits = 3) const { return n == 0 ? "-" : fmt(sum / n, digits); }
};

/// Mean pairwise disagreement for groups of runs that differ only in the
/// field `varying`. Returns per-backend (mean, groups, pairs).
inline std::map<std::string, std::tuple<Mean, int, int>> sensitivity(const std::vector<json>& records,
                                                                   const std::filesystem::path& out_dir,
                                                                   const std::string& varying) {
  std::map<std::string, std::vector<const json*>> groups;
  for (const auto& r : records) {
    if (!is_ok(r) || !r.contains("map_file")) continue;
    json key = {r.value("task", ""), r.value("task_seed", 0), r.value("backend", ""), r.value("n_context", 0)};
    key.push_back(varying == "ordering_seed" ? r.value("labels", json::array()) : r.value("ordering_seed", json()));
    groups[key.dump()].push_back(&r);
  }
  std::map<std::string, std::tuple<Mean, int, int>> out;
  for (const auto& [key, members] : groups) {
    std::set<std::string> distinct;
    for (const auto* r : members) distinct.insert(r->value(varying, json()).dump());
    if (distinct.size() < 2) continue;
    std::vector<DecisionMap> maps;
    for (const auto* r : members) {
      std::ifstream in(out_dir / r->at("map_file").get<std::string>(), std::ios::binary);
      if (!in) continue;
      maps.push_back(map_io::read(in));
    }
    if (maps.size() < 2) continue;
    int pairs = 0;
    const double d = mean_pairwise_disagreement(maps, &pairs);
    auto& [mean, n_groups, n_pairs] = out[members.front()->value("backend", "")];
    mean.add(d);
    ++n_groups;
    n_pairs += pairs;
  }
  return out;
}

}  // namespace detail

/// Markdown summary of a ledger. Map files are resolved against `out_dir`.
inline std::string report(const std::vector<json>& all_records, const std::filesystem::path& out_dir,
                          const std::vector<std::filesystem::path>& figures = {}) {
  require(!all_records.empty(), ErrorCode::empty_ledger, "ledger has no records");
  const std::vector<json> records = latest_records(all_records);

  struct Row {
    int runs = 0, failed = 0;
    detail::Mean acc, frag, regions, abstain;
  };
  std::map<std::string, Row> rows;
  std::map<std::tuple<std::string, std::string, int>, std::vector<double>> cells;
  for (const auto& r : records) {
    Row& row = rows[r.value("backend", "")];
    ++row.runs;
    if (!is_ok(r)) {
      ++row.failed;
      continue;
    }
    if (r.contains("test_accuracy") && !r.at("test_accuracy").is_null()) {
      row.acc.add(r.at("test_accuracy").get<double>());
      cells[{r.value("backend", ""), r.value("task", ""), r.value("n_context", 0)}].push_back(
          r.at("test_accuracy").get<double>());
    }
    const json& m = r.at("metrics");
    row.frag.add(m.at("fragmentation").get<double>());
    row.regions.add(m.at("region_count").get<double>());
    row.abstain.add(m.value("abstain_fraction", 0.0));
  }
  const auto order = detail::sensitivity(records, out_dir, "ordering_seed");
  const auto swap = detail::sensitivity(records, out_dir, "labels");

  std::string md = "# Decision boundary report\n\n";
  md += std::to_string(records.size()) + " runs from " + std::to_string(all_records.size()) + " ledger records.\n\n";
  md += "## Per-backend metrics\n\n";
  md += "| backend | runs | failed | accuracy | fragmentation | regions | abstain fraction | order disagreement | "
        "label-swap disagreement |\n";
  md += "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, row] : rows) {
    const auto o = order.find(name);
    const auto s = swap.find(name);
    md += "| " + name + " | " + std::to_string(row.runs) + " | " + std::to_string(row.failed) + " | " + row.acc.str() +
          " | " + row.frag.str(4) + " | " + row.regions.str(1) + " | " + row.abstain.str(4) + " | " +
          (o == order.end() ? "-" : std::get<0>(o->second).str(4)) + " | " +
          (s == swap.end() ? "-" : std::get<0>(s->second).str(4)) + " |\n";
  }

  if (!order.empty()) {
    md += "\n## Order sensitivity\n\nMean pairwise disagreement between maps that differ only in context order.\n\n";
    md += "| backend | groups | pairs | mean disagreement |\n|---|---|---|---|\n";
    for (const auto& [name, v] : order) {
      md += "| " + name + " | " + std::to_string(std::get<1>(v)) + " | " + std::to_string(std::get<2>(v)) + " | " +
            std::get<0>(v).str(4) + " |\n";
    }
  }
  if (!swap.empty()) {
    md += "\n## Label-swap sensitivity\n\nMean pairwise disagreement between maps that differ only in label strings.\n\n";
    md += "| backend | groups | pairs | mean disagreement |\n|---|---|---|---|\n";
    for (const auto& [name, v] : swap) {
      md += "| " + name + " | " + std::to_string(std::get<1>(v)) + " | " + std::to_string(std::get<2>(v)) + " | " +
            std::get<0>(v).str(4) + " |\n";
    }
  }

  if (!cells.empty()) {
    md += "\n## Accuracy by context size\n\n| backend | task | n_context | mean | se | seeds |\n|---|---|---|---|---|---|\n";
    for (const auto& [key, accs] : cells) {
      std::vector<AccuracySample> samples;
      for (double a : accs) samples.push_back({std::get<2>(key), a});
      const CurvePoint p = accuracy_curve(samples).front();
      md += "| " + std::get<0>(key) + " | " + std::get<1>(key) + " | " + std::to_string(p.n_context) + " | " +
            detail::fmt(p.mean_accuracy) + " | " + (p.standard_error ? detail::fmt(*p.standard_error) : "-") + " | " +
            std::to_string(p.n_seeds) + " |\n";
    }
  }

  md += "\n## Figures\n\n";
  for (const auto& f : figures) {
    const std::string rel = std::filesystem::relative(f, out_dir).generic_string();
    md += "- [" + rel + "](" + rel + ")\n";
  }
  for (const auto& r : records) {
    if (r.contains("svg_file")) {
      const std::string f = r.at("svg_file").get<std::string>();
      md += "- [" + f + "](" + f + ")\n";
    }
  }
  md += "\nFragmentation and region count are this harness's own smoothness measures; abstaining cells count as "
        "boundary edges and as wrong answers.\n";
  return md;
}

}  // namespace iclb::experiment
