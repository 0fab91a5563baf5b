#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <vector>

#include "iclb/baselines/common.hpp"

namespace iclb::baselines {

struct LogRegParams {
  double l2 = 0.0;
  int max_iter = 200;
  double grad_tol = 1e-8;
  double margin_target = 10.0;  // separable early stop, l2 == 0 only
};

/// log(sigmoid(z)) without overflow.
inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// theta = (w0, w1, b); targets in {0, 1}.
struct BinaryLogReg {
  std::array<double, 3> theta{0.0, 0.0, 0.0};

  double decision(const Point& x) const { return theta[0] * x[0] + theta[1] * x[1] + theta[2]; }
};

/// Mean cross-entropy plus (l2/2)||w||^2 (bias unpenalized) and its gradient.
inline double logreg_loss_and_grad(const std::array<double, 3>& theta, std::span<const Point> xs,
                                   std::span<const int> targets, double l2, std::array<double, 3>& grad) {
  grad = {0.0, 0.0, 0.0};
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double z = theta[0] * xs[i][0] + theta[1] * xs[i][1] + theta[2];
    const double t = targets[i];
    loss -= t * log_sigmoid(z) + (1.0 - t) * log_sigmoid(-z);
    const double r = sigmoid(z) - t;
    grad[0] += r * xs[i][0];
    grad[1] += r * xs[i][1];
    grad[2] += r;
  }
  loss *= inv_n;
  for (double& g : grad) g *= inv_n;
  loss += 0.5 * l2 * (theta[0] * theta[0] + theta[1] * theta[1]);
  grad[0] += l2 * theta[0];
  grad[1] += l2 * theta[1];
  return loss;
}

/// Damped Newton with backtracking for one binary problem. On separable data
/// (l2 == 0) the weights diverge, so fitting stops once every point clears
/// margin_target.
inline TrainReport fit_binary_logreg(BinaryLogReg& model, std::span<const Point> xs, std::span<const int> targets,
                                     const LogRegParams& p) {
  const auto t0 = std::chrono::steady_clock::now();
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  TrainReport r;
  std::array<double, 3> grad{};
  r.final_loss = logreg_loss_and_grad(model.theta, xs, targets, p.l2, grad);
  for (r.iterations = 0; r.iterations < p.max_iter; ++r.iterations) {
    const double ginf = std::max({std::abs(grad[0]), std::abs(grad[1]), std::abs(grad[2])});
    if (ginf < p.grad_tol) {
      r.converged = true;
      break;
    }
    if (p.l2 == 0.0) {
      bool separated = true;
      for (std::size_t i = 0; i < xs.size() && separated; ++i) {
        const double signed_margin = (targets[i] == 1 ? 1.0 : -1.0) * model.decision(xs[i]);
        separated = signed_margin > p.margin_target;
      }
      if (separated) {
        r.converged = true;
        break;
      }
    }

    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (const auto& x : xs) {
      const double s = sigmoid(model.theta[0] * x[0] + model.theta[1] * x[1] + model.theta[2]);
      const Eigen::Vector3d v(x[0], x[1], 1.0);
      h.noalias() += (s * (1.0 - s) * inv_n) * v * v.transpose();
    }
    h(0, 0) += p.l2 + 1e-12;
    h(1, 1) += p.l2 + 1e-12;
    h(2, 2) += 1e-12;
    const Eigen::Vector3d g(grad[0], grad[1], grad[2]);
    Eigen::Vector3d step = h.ldlt().solve(g);
    if (!step.allFinite() || step.dot(g) <= 0.0) step = g;

    const double slope = step.dot(g);
    double t = 1.0;
    std::array<double, 3> trial{};
    std::array<double, 3> trial_grad{};
    double trial_loss = r.final_loss;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      for (int d = 0; d < 3; ++d) trial[d] = model.theta[d] - t * step(d);
      trial_loss = logreg_loss_and_grad(trial, xs, targets, p.l2, trial_grad);
      if (trial_loss <= r.final_loss - 1e-4 * t * slope) break;
    }
    if (!(trial_loss < r.final_loss)) {
      r.converged = true;  // no further decrease representable
      break;
    }
    model.theta = trial;
    grad = trial_grad;
    r.final_loss = trial_loss;
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Binary logistic regression, one-vs-rest for K > 2.
class LogisticRegression {
 public:
  TrainReport fit(Data data, int num_classes, const LogRegParams& p = {}) {
    k_ = num_classes;
    const auto counts = class_counts(data, k_);
    int present = 0;
    for (int c : counts) present += c > 0;
    require(present >= 2, ErrorCode::degenerate_data, "logistic regression needs at least two classes");
    for (int c : counts) require(c > 0, ErrorCode::degenerate_data, "every class needs at least one example");

    std::vector<Point> xs;
    xs.reserve(data.size());
    for (const auto& d : data) xs.push_back(d.raw);
    units_.assign(k_ == 2 ? 1 : static_cast<std::size_t>(k_), {});
    TrainReport total;
    for (std::size_t u = 0; u < units_.size(); ++u) {
      const int positive = k_ == 2 ? 1 : static_cast<int>(u);
      std::vector<int> t;
      t.reserve(data.size());
      for (const auto& d : data) t.push_back(d.label == positive ? 1 : 0);
      const TrainReport r = fit_binary_logreg(units_[u], xs, t, p);
      total.iterations = std::max(total.iterations, r.iterations);
      total.final_loss += r.final_loss / static_cast<double>(units_.size());
      total.converged = u == 0 ? r.converged : (total.converged && r.converged);
      total.wall_seconds += r.wall_seconds;
    }
    return total;
  }

  /// Per-class log-probabilities (OvR probabilities renormalized for K > 2).
  std::vector<double> log_probs(const Point& x) const {
    if (k_ == 2) {
      const double z = units_[0].decision(x);
      return {log_sigmoid(-z), log_sigmoid(z)};
    }
    std::vector<double> lp(static_cast<std::size_t>(k_));
    double m = -1e300;
    for (std::size_t c = 0; c < lp.size(); ++c) {
      lp[c] = log_sigmoid(units_[c].decision(x));
      m = std::max(m, lp[c]);
    }
    double z = 0.0;
    for (double v : lp) z += std::exp(v - m);
    const double lse = m + std::log(z);
    for (double& v : lp) v -= lse;
    return lp;
  }

  int predict(const Point& x) const {
    if (k_ == 2) return units_[0].decision(x) > 0.0 ? 1 : 0;
    int best = 0;
    for (int c = 1; c < k_; ++c) {
      if (units_[static_cast<std::size_t>(c)].decision(x) > units_[static_cast<std::size_t>(best)].decision(x)) best = c;
    }
    return best;
  }

  double accuracy(Data data) const {
    if (data.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& d : data) ok += predict(d.raw) == d.label;
    return static_cast<double>(ok) / static_cast<double>(data.size());
  }

  int num_classes() const { return k_; }
  const std::vector<BinaryLogReg>& units() const { return units_; }

  nlohmann::json to_json() const {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : units_) units.push_back(u.theta);
    return {{"kind", "logreg"}, {"num_classes", k_}, {"units", units}};
  }

  static LogisticRegression from_json(const nlohmann::json& j) {
    LogisticRegression m;
    m.k_ = j.at("num_classes").get<int>();
    for (const auto& u : j.at("units")) m.units_.push_back(BinaryLogReg{u.get<std::array<double, 3>>()});
    return m;
  }

 private:
  int k_ = 2;
  std::vector<BinaryLogReg> units_;
};

}  // namespace iclb::baselines
