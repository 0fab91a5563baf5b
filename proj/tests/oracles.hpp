#pragma once

// Slow reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "iclb/baselines/svm.hpp"
#include "iclb/types.hpp"

namespace iclb::oracle {

/// Central differences of f at theta.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> theta, double h = 1e-6) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t = theta[i];
    theta[i] = t + h;
    const double up = f(theta);
    theta[i] = t - h;
    const double down = f(theta);
    theta[i] = t;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - n_i| / max(max_i(|a_i| + |n_i|), floor): coordinate errors
/// measured against the scale of the whole gradient.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-6) {
  double diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max(scale, std::abs(a[i]) + std::abs(n[i]));
  }
  return diff / scale;
}

/// 4-connected components of a row-major G x G label array. Every cell equal
/// to `abstain` is its own component.
inline int union_find_regions(const std::vector<int>& labels, int g, int abstain = -1) {
  std::vector<int> parent(labels.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
  auto unite = [&](int a, int b) { parent[find(a)] = find(b); };
  for (int j = 0; j < g; ++j) {
    for (int i = 0; i < g; ++i) {
      const int c = j * g + i;
      if (labels[c] == abstain) continue;
      if (i + 1 < g && labels[c + 1] == labels[c]) unite(c, c + 1);
      if (j + 1 < g && labels[c + g] == labels[c]) unite(c, c + g);
    }
  }
  int roots = 0;
  for (int c = 0; c < static_cast<int>(labels.size()); ++c) roots += find(c) == c;
  return roots;
}

/// Repeatedly takes the highest-entropy admissible cell, scanning all cells
/// each round; strict comparison keeps the lowest index on ties.
inline std::vector<std::size_t> brute_force_greedy(const std::vector<double>& entropy, const std::vector<bool>& blocked,
                                                   int g, int k, double min_sep) {
  std::vector<std::size_t> chosen;
  while (static_cast<int>(chosen.size()) < k) {
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < entropy.size(); ++c) {
      if (blocked[c] || std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
      bool ok = true;
      for (std::size_t o : chosen) {
        const double di = static_cast<double>(static_cast<int>(c % g) - static_cast<int>(o % g));
        const double dj = static_cast<double>(static_cast<int>(c / g) - static_cast<int>(o / g));
        ok = ok && std::sqrt(di * di + dj * dj) >= min_sep;
      }
      if (ok && (!best || entropy[c] > entropy[*best])) best = c;
    }
    if (!best) break;
    chosen.push_back(*best);
  }
  return chosen;
}

/// Labels of the k nearest points by exhaustive scan (ties to lower index),
/// majority vote with ties to the smaller summed distance, then lower class.
inline int brute_force_knn(const std::vector<LabeledPoint>& data, const Point& q, int k, int num_classes) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double dx = data[i].raw[0] - q[0], dy = data[i].raw[1] - q[1];
    d.emplace_back(dx * dx + dy * dy, i);
  }
  std::sort(d.begin(), d.end());
  std::vector<int> votes(num_classes, 0);
  std::vector<double> dist(num_classes, 0.0);
  for (int r = 0; r < k; ++r) {
    const int c = data[d[r].second].label;
    ++votes[c];
    dist[c] += std::sqrt(d[r].first);
  }
  int best = 0;
  for (int c = 1; c < num_classes; ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && votes[c] > 0 && dist[c] < dist[best])) best = c;
  }
  return best;
}

struct RootSplit {
  int feature = -1;
  double threshold = 0.0;
  double weighted_gini = std::numeric_limits<double>::infinity();
};

/// Weighted Gini impurity of splitting on raw[f] <= t, by explicit partition.
inline double split_gini(const std::vector<LabeledPoint>& data, int num_classes, int f, double t) {
  auto gini = [&](const std::vector<const LabeledPoint*>& part) {
    if (part.empty()) return 0.0;
    std::vector<double> n(num_classes, 0.0);
    for (const auto* p : part) n[p->label] += 1.0;
    double s = 1.0;
    for (double c : n) s -= (c / part.size()) * (c / part.size());
    return s;
  };
  std::vector<const LabeledPoint*> l, r;
  for (const auto& p : data) (p.raw[f] <= t ? l : r).push_back(&p);
  return (l.size() * gini(l) + r.size() * gini(r)) / data.size();
}

/// Tries every midpoint between distinct sorted values on both features.
inline RootSplit exhaustive_root_split(const std::vector<LabeledPoint>& data, int num_classes) {
  RootSplit best;
  for (int f = 0; f < 2; ++f) {
    std::vector<double> values;
    for (const auto& p : data) values.push_back(p.raw[f]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t v = 0; v + 1 < values.size(); ++v) {
      const double t = 0.5 * (values[v] + values[v + 1]);
      const double w = split_gini(data, num_classes, f, t);
      if (w < best.weighted_gini - 1e-12) best = {f, t, w};
    }
  }
  return best;
}

/// Worst KKT violation of a fitted binary SVM, and |sum alpha_i y_i|.
struct KktReport {
  double worst = 0.0;
  double equality = 0.0;
};

inline KktReport kkt(const baselines::BinarySvm& s) {
  KktReport r;
  double eq = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    const double m = s.y[i] * s.decision(s.x[i]);
    const double a = s.alpha[i];
    double v = 0.0;
    if (a <= 0.0) v = std::max(0.0, 1.0 - m);
    else if (a >= s.C) v = std::max(0.0, m - 1.0);
    else v = std::abs(m - 1.0);
    r.worst = std::max(r.worst, v);
    eq += a * s.y[i];
  }
  r.equality = std::abs(eq);
  return r;
}

/// Max of the dual over a uniform alpha grid for exactly four points with
/// labels (+1, +1, -1, -1); alpha_4 is fixed by the equality constraint.
inline double dual_grid_search(const std::vector<Point>& x, const std::vector<double>& y,
                               const baselines::Kernel& kernel, double C, int steps) {
  double q[4][4];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) q[i][j] = y[i] * y[j] * kernel(x[i], x[j]);
  }
  double best = -std::numeric_limits<double>::infinity();
  const double h = C / steps;
  for (int a = 0; a <= steps; ++a) {
    for (int b = 0; b <= steps; ++b) {
      for (int c = 0; c <= steps; ++c) {
        const int d = a + b - c;
        if (d < 0 || d > steps) continue;
        const double al[4] = {a * h, b * h, c * h, d * h};
        double quad = 0.0;
        for (int i = 0; i < 4; ++i) {
          for (int j = 0; j < 4; ++j) quad += al[i] * al[j] * q[i][j];
        }
        best = std::max(best, al[0] + al[1] + al[2] + al[3] - 0.5 * quad);
      }
    }
  }
  return best;
}

}  // namespace iclb::oracle
