#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "iclb/baselines/common.hpp"

namespace iclb::baselines {

struct Kernel {
  enum class Type { rbf, poly };
  Type type = Type::rbf;
  double gamma = 0.2;  // <= 0 for poly means 1 / (2 * Var(X)) at fit time
  int degree = 3;
  double coef0 = 1.0;

  static Kernel rbf(double gamma) { return {Type::rbf, gamma, 3, 0.0}; }
  static Kernel poly(int degree = 3, double coef0 = 1.0, double gamma = 0.0) {
    return {Type::poly, gamma, degree, coef0};
  }

  double operator()(const Point& a, const Point& b) const {
    if (type == Type::rbf) {
      const double dx = a[0] - b[0];
      const double dy = a[1] - b[1];
      return std::exp(-gamma * (dx * dx + dy * dy));
    }
    return std::pow(gamma * (a[0] * b[0] + a[1] * b[1]) + coef0, degree);
  }
};

inline void to_json(nlohmann::json& j, const Kernel& k) {
  j = nlohmann::json{{"type", k.type == Kernel::Type::rbf ? "rbf" : "poly"},
                     {"gamma", k.gamma}, {"degree", k.degree}, {"coef0", k.coef0}};
}

inline void from_json(const nlohmann::json& j, Kernel& k) {
  const auto t = j.value("type", std::string("rbf"));
  require(t == "rbf" || t == "poly", ErrorCode::config, "kernel must be rbf or poly, got '" + t + "'");
  k.type = t == "rbf" ? Kernel::Type::rbf : Kernel::Type::poly;
  k.gamma = j.value("gamma", t == "rbf" ? 0.2 : 0.0);
  k.degree = j.value("degree", 3);
  k.coef0 = j.value("coef0", t == "rbf" ? 0.0 : 1.0);
}

struct SvmParams {
  Kernel kernel = Kernel::rbf(0.2);
  double C = 1.0;
  double tol = 1e-3;
  long max_iter = 10'000'000;
};

/// Dual solution of one binary soft-margin problem, targets in {-1, +1}.
struct BinarySvm {
  std::vector<Point> x;
  std::vector<double> y;
  std::vector<double> alpha;
  double b = 0.0;
  Kernel kernel;
  double C = 1.0;
  long iterations = 0;
  bool converged = false;

  double decision(const Point& q) const {
    double f = b;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (alpha[i] != 0.0) f += alpha[i] * y[i] * kernel(x[i], q);
    }
    return f;
  }

  /// sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij
  double dual_objective() const {
    double quad = 0.0;
    double lin = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lin += alpha[i];
      for (std::size_t j = 0; j < x.size(); ++j) quad += alpha[i] * alpha[j] * y[i] * y[j] * kernel(x[i], x[j]);
    }
    return lin - 0.5 * quad;
  }
};

/// SMO on the dual with maximal-violating-pair working sets. Stops when the
/// violation gap m(alpha) - M(alpha) drops below tol; the bias is the mean of
/// y_i G_i over free support vectors (bound midpoint when none are free).
inline BinarySvm solve_binary_svm(std::vector<Point> xs, std::vector<double> ys, const SvmParams& p) {
  const std::size_t n = xs.size();
  BinarySvm s;
  s.kernel = p.kernel;
  s.C = p.C;
  std::vector<double> kmat(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = p.kernel(xs[i], xs[j]);
      require(std::isfinite(v), ErrorCode::numerical, "kernel matrix has a non-finite entry");
      kmat[i * n + j] = v;
    }
  }
  auto q = [&](std::size_t i, std::size_t j) { return ys[i] * ys[j] * kmat[i * n + j]; };

  std::vector<double> alpha(n, 0.0);
  std::vector<double> grad(n, -1.0);
  const double c = p.C;
  constexpr double kTau = 1e-12;
  auto in_up = [&](std::size_t t) { return (ys[t] > 0 && alpha[t] < c) || (ys[t] < 0 && alpha[t] > 0); };
  auto in_low = [&](std::size_t t) { return (ys[t] > 0 && alpha[t] > 0) || (ys[t] < 0 && alpha[t] < c); };

  long it = 0;
  for (; it < p.max_iter; ++it) {
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -ys[t] * grad[t];
      if (in_up(t) && v > gmax) {
        gmax = v;
        i = t;
      }
      if (in_low(t) && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    if (i == n || j == n || gmax - gmin < p.tol) {
      s.converged = true;
      break;
    }
    const double ai_old = alpha[i];
    const double aj_old = alpha[j];
    if (ys[i] != ys[j]) {
      double quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else if (alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      double quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double di = alpha[i] - ai_old;
    const double dj = alpha[j] - aj_old;
    for (std::size_t t = 0; t < n; ++t) grad[t] += q(i, t) * di + q(j, t) * dj;
  }

  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  int n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = ys[t] * grad[t];
    if (alpha[t] >= c) {
      if (ys[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (ys[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / n_free : 0.5 * (ub + lb);
  s.b = -rho;
  s.iterations = it;
  s.x = std::move(xs);
  s.y = std::move(ys);
  s.alpha = std::move(alpha);
  return s;
}

/// Kernel SVM; one-vs-rest for K > 2. Class 1 is the positive side when K = 2.
class Svm {
 public:
  TrainReport fit(Data data, int num_classes, SvmParams p = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto counts = class_counts(data, num_classes);
    for (int c : counts) require(c > 0, ErrorCode::degenerate_data, "SVM needs every class present");
    k_ = num_classes;
    if (p.kernel.type == Kernel::Type::poly && p.kernel.gamma <= 0.0) p.kernel.gamma = scale_gamma(data);
    params_ = p;
    std::vector<Point> xs;
    for (const auto& d : data) xs.push_back(d.raw);
    units_.clear();
    TrainReport r;
    r.converged = true;
    const int n_units = k_ == 2 ? 1 : k_;
    for (int u = 0; u < n_units; ++u) {
      const int positive = k_ == 2 ? 1 : u;
      std::vector<double> ys;
      for (const auto& d : data) ys.push_back(d.label == positive ? 1.0 : -1.0);
      units_.push_back(solve_binary_svm(xs, std::move(ys), p));
      r.iterations = std::max<int>(r.iterations, static_cast<int>(units_.back().iterations));
      r.converged = r.converged && units_.back().converged;
      r.final_loss -= units_.back().dual_objective();
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  /// 1 / (2 * Var(X)) over all coordinates.
  static double scale_gamma(Data data) {
    double sum = 0.0, sq = 0.0;
    for (const auto& d : data) {
      sum += d.raw[0] + d.raw[1];
      sq += d.raw[0] * d.raw[0] + d.raw[1] * d.raw[1];
    }
    const double m = 2.0 * static_cast<double>(data.size());
    const double var = sq / m - (sum / m) * (sum / m);
    return var > 0.0 ? 1.0 / (2.0 * var) : 1.0;
  }

  std::vector<double> decision_values(const Point& q) const {
    std::vector<double> f;
    for (const auto& u : units_) f.push_back(u.decision(q));
    return f;
  }

  int predict(const Point& q) const {
    const auto f = decision_values(q);
    if (k_ == 2) return f[0] > 0.0 ? 1 : 0;
    int best = 0;
    for (std::size_t c = 1; c < f.size(); ++c) {
      if (f[c] > f[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    return best;
  }

  const std::vector<BinarySvm>& units() const { return units_; }
  const SvmParams& params() const { return params_; }
  int num_classes() const { return k_; }

  /// Only support vectors (alpha > 0) are stored.
  nlohmann::json to_json() const {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : units_) {
      nlohmann::json sv = nlohmann::json::array();
      for (std::size_t i = 0; i < u.x.size(); ++i) {
        if (u.alpha[i] != 0.0) sv.push_back({{"x", u.x[i]}, {"y", u.y[i]}, {"alpha", u.alpha[i]}});
      }
      units.push_back({{"b", u.b}, {"support_vectors", sv}});
    }
    return {{"kind", "svm"}, {"num_classes", k_}, {"kernel", params_.kernel}, {"C", params_.C}, {"units", units}};
  }

  static Svm from_json(const nlohmann::json& j) {
    Svm m;
    m.k_ = j.at("num_classes").get<int>();
    m.params_.kernel = j.at("kernel").get<Kernel>();
    m.params_.C = j.at("C").get<double>();
    for (const auto& u : j.at("units")) {
      BinarySvm b;
      b.kernel = m.params_.kernel;
      b.C = m.params_.C;
      b.b = u.at("b").get<double>();
      for (const auto& sv : u.at("support_vectors")) {
        b.x.push_back(sv.at("x").get<Point>());
        b.y.push_back(sv.at("y").get<double>());
        b.alpha.push_back(sv.at("alpha").get<double>());
      }
      m.units_.push_back(std::move(b));
    }
    return m;
  }

 private:
  int k_ = 2;
  SvmParams params_;
  std::vector<BinarySvm> units_;
};

}  // namespace iclb::baselines
