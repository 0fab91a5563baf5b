#pragma once

// Smoothness, accuracy and sensitivity measures over decision maps.

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "iclb/backend.hpp"
#include "iclb/probe.hpp"

namespace iclb {

/// Fraction of 4-neighbour cell pairs whose labels differ. Any pair touching
/// an abstain cell counts as differing.
inline double fragmentation(const DecisionMap& m) {
  const int g = m.grid.G;
  require(g >= 2, ErrorCode::param, "fragmentation needs G >= 2");
  long differing = 0;
  auto differs = [&](std::size_t a, std::size_t b) {
    return m.labels[a] == kAbstain || m.labels[b] == kAbstain || m.labels[a] != m.labels[b];
  };
  for (int j = 0; j < g; ++j) {
    for (int i = 0; i < g; ++i) {
      const std::size_t c = m.grid.index(i, j);
      if (i + 1 < g) differing += differs(c, m.grid.index(i + 1, j));
      if (j + 1 < g) differing += differs(c, m.grid.index(i, j + 1));
    }
  }
  const long pairs = 2L * g * (g - 1);
  return static_cast<double>(differing) / static_cast<double>(pairs);
}

/// Number of 4-connected same-label components. Abstain cells never join a
/// component, so each one is its own region.
inline int region_count(const DecisionMap& m) {
  const int g = m.grid.G;
  require(g >= 1, ErrorCode::param, "region_count needs G >= 1");
  std::vector<char> seen(m.labels.size(), 0);
  std::vector<std::size_t> stack;
  int regions = 0;
  for (std::size_t start = 0; start < m.labels.size(); ++start) {
    if (seen[start]) continue;
    ++regions;
    seen[start] = 1;
    const int label = m.labels[start];
    if (label == kAbstain) continue;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t c = stack.back();
      stack.pop_back();
      const int i = m.grid.col(c);
      const int j = m.grid.row(c);
      const int di[4] = {1, -1, 0, 0};
      const int dj[4] = {0, 0, 1, -1};
      for (int d = 0; d < 4; ++d) {
        const int ni = i + di[d];
        const int nj = j + dj[d];
        if (ni < 0 || nj < 0 || ni >= g || nj >= g) continue;
        const std::size_t n = m.grid.index(ni, nj);
        if (!seen[n] && m.labels[n] == label) {
          seen[n] = 1;
          stack.push_back(n);
        }
      }
    }
  }
  return regions;
}

/// Fraction of cells whose labels differ.
inline double disagreement(const DecisionMap& a, const DecisionMap& b) {
  if (!(a.grid == b.grid) || a.labels.size() != b.labels.size()) {
    fail(ErrorCode::grid_mismatch, "maps were probed on different grids");
  }
  if (a.labels.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t c = 0; c < a.labels.size(); ++c) diff += a.labels[c] != b.labels[c];
  return static_cast<double>(diff) / static_cast<double>(a.labels.size());
}

/// Mean disagreement over all unordered pairs.
inline double mean_pairwise_disagreement(const std::vector<DecisionMap>& maps, int* pair_count = nullptr) {
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    for (std::size_t j = i + 1; j < maps.size(); ++j) {
      sum += disagreement(maps[i], maps[j]);
      ++pairs;
    }
  }
  if (pair_count) *pair_count = pairs;
  return pairs == 0 ? 0.0 : sum / pairs;
}

/// Label complement of a binary map; abstain cells stay abstain.
inline DecisionMap complement(DecisionMap m) {
  require(m.num_classes == 2, ErrorCode::param, "complement is defined for two classes");
  for (int& l : m.labels) {
    if (l != kAbstain) l = 1 - l;
  }
  if (m.probs) {
    for (std::size_t c = 0; c < m.labels.size(); ++c) std::swap((*m.probs)[2 * c], (*m.probs)[2 * c + 1]);
  }
  return m;
}

struct MapMetrics {
  double fragmentation = 0.0;
  int region_count = 1;
  std::optional<double> oracle_disagreement;
  double abstain_fraction = 0.0;
};

inline MapMetrics map_metrics(const DecisionMap& m, const DecisionMap* oracle = nullptr) {
  MapMetrics r;
  r.fragmentation = fragmentation(m);
  r.region_count = region_count(m);
  r.abstain_fraction = m.abstain_fraction();
  if (oracle) r.oracle_disagreement = disagreement(m, *oracle);
  return r;
}

inline void to_json(nlohmann::json& j, const MapMetrics& m) {
  j = nlohmann::json{{"fragmentation", m.fragmentation},
                     {"region_count", m.region_count},
                     {"abstain_fraction", m.abstain_fraction}};
  j["oracle_disagreement"] = m.oracle_disagreement ? nlohmann::json(*m.oracle_disagreement) : nlohmann::json();
}

inline void from_json(const nlohmann::json& j, MapMetrics& m) {
  m.fragmentation = j.at("fragmentation").get<double>();
  m.region_count = j.at("region_count").get<int>();
  m.abstain_fraction = j.value("abstain_fraction", 0.0);
  if (j.contains("oracle_disagreement") && !j.at("oracle_disagreement").is_null()) {
    m.oracle_disagreement = j.at("oracle_disagreement").get<double>();
  }
}

/// Share of test points the backend labels correctly; abstains are wrong.
inline double test_accuracy(const Backend& backend, const ProbeContext& ctx, std::span<const LabeledPoint> test) {
  require(!test.empty(), ErrorCode::size, "test set is empty");
  std::vector<QueryPoint> qs;
  qs.reserve(test.size());
  for (const auto& p : test) qs.push_back({p.raw, p.prompt});
  const auto cells = classify_batch(backend, ctx, qs);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test.size(); ++i) ok += cells[i].ok() && cells[i].prediction->cls == test[i].label;
  return static_cast<double>(ok) / static_cast<double>(test.size());
}

struct CurvePoint {
  int n_context = 0;
  double mean_accuracy = 0.0;
  std::optional<double> standard_error;  // absent with a single seed
  int n_seeds = 0;
};

struct AccuracySample {
  int n_context = 0;
  double accuracy = 0.0;
};

/// Mean and standard error (sample std / sqrt(n)) per context size, ascending.
inline std::vector<CurvePoint> accuracy_curve(const std::vector<AccuracySample>& samples) {
  std::map<int, std::vector<double>> by_n;
  for (const auto& s : samples) by_n[s.n_context].push_back(s.accuracy);
  std::vector<CurvePoint> out;
  for (const auto& [n, acc] : by_n) {
    CurvePoint p;
    p.n_context = n;
    p.n_seeds = static_cast<int>(acc.size());
    p.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / p.n_seeds;
    if (p.n_seeds >= 2) {
      double ss = 0.0;
      for (double a : acc) ss += (a - p.mean_accuracy) * (a - p.mean_accuracy);
      p.standard_error = std::sqrt(ss / (p.n_seeds - 1)) / std::sqrt(static_cast<double>(p.n_seeds));
    }
    out.push_back(p);
  }
  return out;
}

inline std::string curve_csv(const std::vector<CurvePoint>& pts) {
  std::string out = "n_context,mean,se,n_seeds\n";
  for (const auto& p : pts) {
    out += std::to_string(p.n_context) + ',' + map_io::fmt_double(p.mean_accuracy) + ',' +
           (p.standard_error ? map_io::fmt_double(*p.standard_error) : std::string()) + ',' +
           std::to_string(p.n_seeds) + '\n';
  }
  return out;
}

}  // namespace iclb
