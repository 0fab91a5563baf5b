#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

#include "iclb/baselines/common.hpp"

namespace iclb::baselines {

/// k-nearest-neighbour majority vote. Distance ties at the k-th rank go to the
/// earlier-inserted point; vote ties go to the class with the smaller summed
/// distance, then the lower class index.
class KNearestNeighbors {
 public:
  explicit KNearestNeighbors(int k = 5) : k_(k) {}

  void fit(Data data, int num_classes) {
    require(k_ >= 1, ErrorCode::config, "k must be positive");
    require(data.size() >= static_cast<std::size_t>(k_), ErrorCode::size,
            "k-NN needs at least k=" + std::to_string(k_) + " points, got " + std::to_string(data.size()));
    class_counts(data, num_classes);
    points_.assign(data.begin(), data.end());
    num_classes_ = num_classes;
  }

  /// Indices of the k nearest stored points, nearest first.
  std::vector<std::size_t> neighbors(const Point& q) const {
    std::vector<std::size_t> idx(points_.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> d2(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) d2[i] = dist2(points_[i].raw, q);
    std::partial_sort(idx.begin(), idx.begin() + k_, idx.end(), [&](std::size_t a, std::size_t b) {
      return d2[a] < d2[b] || (d2[a] == d2[b] && a < b);
    });
    idx.resize(static_cast<std::size_t>(k_));
    return idx;
  }

  int predict(const Point& q) const {
    std::vector<int> votes(static_cast<std::size_t>(num_classes_), 0);
    std::vector<double> dist_sum(static_cast<std::size_t>(num_classes_), 0.0);
    for (std::size_t i : neighbors(q)) {
      const auto c = static_cast<std::size_t>(points_[i].label);
      ++votes[c];
      dist_sum[c] += std::sqrt(dist2(points_[i].raw, q));
    }
    int best = 0;
    for (int c = 1; c < num_classes_; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      const auto bu = static_cast<std::size_t>(best);
      if (votes[cu] > votes[bu] || (votes[cu] == votes[bu] && votes[cu] > 0 && dist_sum[cu] < dist_sum[bu])) best = c;
    }
    return best;
  }

  int k() const { return k_; }
  int num_classes() const { return num_classes_; }

  nlohmann::json to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points_) pts.push_back({{"x", p.raw}, {"y", p.label}});
    return {{"kind", "knn"}, {"k", k_}, {"num_classes", num_classes_}, {"points", pts}};
  }

  static KNearestNeighbors from_json(const nlohmann::json& j) {
    KNearestNeighbors m(j.at("k").get<int>());
    m.num_classes_ = j.at("num_classes").get<int>();
    for (const auto& p : j.at("points")) {
      const Point x = p.at("x").get<Point>();
      m.points_.push_back(LabeledPoint{x, x, p.at("y").get<int>()});
    }
    return m;
  }

  static double dist2(const Point& a, const Point& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    return dx * dx + dy * dy;
  }

 private:
  int k_;
  int num_classes_ = 2;
  std::vector<LabeledPoint> points_;
};

}  // namespace iclb::baselines
