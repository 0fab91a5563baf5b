#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <optional>
#include <vector>

#include "iclb/baselines/common.hpp"

namespace iclb::baselines {

struct Split {
  int feature = 0;
  double threshold = 0.0;
  double weighted_gini = 0.0;
};

inline double gini(const std::vector<int>& counts, int total) {
  if (total == 0) return 0.0;
  double s = 1.0;
  for (int c : counts) {
    const double p = static_cast<double>(c) / total;
    s -= p * p;
  }
  return s;
}

inline int majority(const std::vector<int>& counts) {
  int best = 0;
  for (std::size_t c = 1; c < counts.size(); ++c) {
    if (counts[c] > counts[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

/// Best axis-aligned split by weighted child Gini. Candidates are midpoints of
/// consecutive distinct sorted values; ties keep the first candidate found
/// (feature 0 before 1, ascending threshold). Returns nothing when no
/// candidate strictly lowers the impurity.
inline std::optional<Split> best_split(Data data, int num_classes) {
  const int n = static_cast<int>(data.size());
  std::vector<int> all(static_cast<std::size_t>(num_classes), 0);
  for (const auto& p : data) ++all[static_cast<std::size_t>(p.label)];
  const double parent = gini(all, n);

  std::optional<Split> best;
  std::vector<std::size_t> order(data.size());
  for (int f = 0; f < 2; ++f) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return data[a].raw[f] < data[b].raw[f]; });
    std::vector<int> left(static_cast<std::size_t>(num_classes), 0);
    std::vector<int> right = all;
    for (int i = 0; i + 1 < n; ++i) {
      const auto& p = data[order[static_cast<std::size_t>(i)]];
      ++left[static_cast<std::size_t>(p.label)];
      --right[static_cast<std::size_t>(p.label)];
      const double v = p.raw[f];
      const double next = data[order[static_cast<std::size_t>(i + 1)]].raw[f];
      if (!(next > v)) continue;
      const int nl = i + 1;
      const int nr = n - nl;
      const double w = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
      if (!best || w < best->weighted_gini) best = Split{f, 0.5 * (v + next), w};
    }
  }
  if (best && best->weighted_gini < parent - 1e-12) return best;
  return std::nullopt;
}

/// Greedy CART with Gini impurity. Points with x[feature] <= threshold go left.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int cls = 0;
  };

  explicit DecisionTree(int max_depth = 3) : max_depth_(max_depth) {}

  void fit(Data data, int num_classes) {
    require(!data.empty(), ErrorCode::size, "decision tree needs data");
    class_counts(data, num_classes);
    num_classes_ = num_classes;
    nodes_.clear();
    std::vector<LabeledPoint> pts(data.begin(), data.end());
    build(pts, 0);
  }

  int predict(const Point& x) const {
    int i = 0;
    while (nodes_[static_cast<std::size_t>(i)].feature >= 0) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(i)].cls;
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  int depth() const { return depth_of(0); }
  int num_classes() const { return num_classes_; }

  nlohmann::json to_json() const {
    return {{"kind", "dtree"}, {"max_depth", max_depth_}, {"num_classes", num_classes_}, {"root", node_json(0)}};
  }

  static DecisionTree from_json(const nlohmann::json& j) {
    DecisionTree t(j.at("max_depth").get<int>());
    t.num_classes_ = j.at("num_classes").get<int>();
    t.load_node(j.at("root"));
    return t;
  }

 private:
  int build(std::vector<LabeledPoint>& pts, int depth) {
    std::vector<int> counts(static_cast<std::size_t>(num_classes_), 0);
    for (const auto& p : pts) ++counts[static_cast<std::size_t>(p.label)];
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{-1, 0.0, -1, -1, majority(counts)});
    const bool pure = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) <= 1;
    if (pure || depth >= max_depth_) return id;
    const auto split = best_split(pts, num_classes_);
    if (!split) return id;
    std::vector<LabeledPoint> l, r;
    for (const auto& p : pts) (p.raw[static_cast<std::size_t>(split->feature)] <= split->threshold ? l : r).push_back(p);
    const int left = build(l, depth + 1);
    const int right = build(r, depth + 1);
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.feature = split->feature;
    n.threshold = split->threshold;
    n.left = left;
    n.right = right;
    return id;
  }

  int depth_of(int i) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.feature < 0) return 0;
    return 1 + std::max(depth_of(n.left), depth_of(n.right));
  }

  nlohmann::json node_json(int i) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.feature < 0) return {{"leaf", n.cls}};
    return {{"feature", n.feature}, {"threshold", n.threshold}, {"cls", n.cls},
            {"left", node_json(n.left)}, {"right", node_json(n.right)}};
  }

  int load_node(const nlohmann::json& j) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    if (j.contains("leaf")) {
      nodes_[static_cast<std::size_t>(id)].cls = j.at("leaf").get<int>();
      return id;
    }
    const int left = load_node(j.at("left"));
    const int right = load_node(j.at("right"));
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.feature = j.at("feature").get<int>();
    n.threshold = j.at("threshold").get<double>();
    n.cls = j.at("cls").get<int>();
    n.left = left;
    n.right = right;
    return id;
  }

  int max_depth_;
  int num_classes_ = 2;
  std::vector<Node> nodes_;
};

}  // namespace iclb::baselines
