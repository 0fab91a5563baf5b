#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "iclb/baselines/common.hpp"
#include "iclb/rng.hpp"

namespace iclb::baselines {

struct MlpParams {
  std::vector<int> hidden{256, 256};
  int max_iter = 1000;  // full-batch epochs
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double loss_tol = 1e-4;
  std::uint64_t seed = 0;
};

/// ReLU network with a softmax head trained on mean cross-entropy with
/// full-batch Adam. Weights are He-uniform from the "mlp-init" substream.
class Mlp {
 public:
  using Mat = Eigen::MatrixXd;
  using RowVec = Eigen::RowVectorXd;

  Mlp() = default;

  /// Builds the architecture and draws the initial weights.
  void init(const MlpParams& p, int num_classes) {
    require(!p.hidden.empty(), ErrorCode::config, "MLP needs at least one hidden layer");
    for (int h : p.hidden) require(h > 0, ErrorCode::config, "hidden layer widths must be positive");
    require(num_classes >= 2, ErrorCode::config, "MLP needs at least two classes");
    k_ = num_classes;
    std::vector<int> sizes{2};
    sizes.insert(sizes.end(), p.hidden.begin(), p.hidden.end());
    sizes.push_back(num_classes);
    Rng rng = substream(p.seed, "mlp-init");
    weights_.clear();
    biases_.clear();
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const double limit = std::sqrt(6.0 / sizes[l]);
      Mat w(sizes[l], sizes[l + 1]);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform_real(rng, -limit, limit);
      }
      weights_.push_back(std::move(w));
      biases_.push_back(RowVec::Zero(sizes[l + 1]));
    }
  }

  TrainReport fit(Data data, int num_classes, const MlpParams& p = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto counts = class_counts(data, num_classes);
    for (int c : counts) require(c > 0, ErrorCode::degenerate_data, "every class needs at least one example");
    init(p, num_classes);
    const Mat x = inputs(data);
    const std::vector<int> y = targets(data);

    std::vector<double> theta = flat_params();
    std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), grad;
    TrainReport r;
    double b1t = 1.0, b2t = 1.0;
    for (r.iterations = 0; r.iterations < p.max_iter; ++r.iterations) {
      r.final_loss = loss_and_grad(x, y, grad);
      if (!std::isfinite(r.final_loss)) fail(ErrorCode::divergence, "MLP loss became non-finite");
      if (r.final_loss < p.loss_tol) {
        r.converged = true;
        break;
      }
      b1t *= p.beta1;
      b2t *= p.beta2;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * grad[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * grad[i] * grad[i];
        const double mh = m[i] / (1.0 - b1t);
        const double vh = v[i] / (1.0 - b2t);
        theta[i] -= p.lr * mh / (std::sqrt(vh) + p.eps);
      }
      set_flat_params(theta);
    }
    if (!r.converged) r.final_loss = loss_and_grad(x, y, grad);
    if (!std::isfinite(r.final_loss)) fail(ErrorCode::divergence, "MLP loss became non-finite");
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  /// Log-softmax outputs for one point. Batches go through this same
  /// single-row path so results do not depend on batch composition.
  std::vector<double> log_probs(const Point& x) const {
    RowVec a(2);
    a << x[0], x[1];
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      RowVec z = a * weights_[l];
      z += biases_[l];
      a = l + 1 < weights_.size() ? RowVec(z.cwiseMax(0.0)) : z;
    }
    const double mx = a.maxCoeff();
    const double lse = mx + std::log((a.array() - mx).exp().sum());
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    for (Eigen::Index c = 0; c < a.size(); ++c) out[static_cast<std::size_t>(c)] = a(c) - lse;
    return out;
  }

  int predict(const Point& x) const {
    const auto lp = log_probs(x);
    int best = 0;
    for (std::size_t c = 1; c < lp.size(); ++c) {
      if (lp[c] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    return best;
  }

  /// Mean cross-entropy and the gradient w.r.t. flat_params() ordering
  /// (per layer: weights column-major, then biases).
  double loss_and_grad(const Mat& x, const std::vector<int>& y, std::vector<double>& grad) const {
    const std::size_t layers = weights_.size();
    std::vector<Mat> acts{x};
    std::vector<Mat> pre;
    for (std::size_t l = 0; l < layers; ++l) {
      Mat z = acts.back() * weights_[l];
      z.rowwise() += biases_[l];
      pre.push_back(z);
      acts.push_back(l + 1 < layers ? Mat(z.cwiseMax(0.0)) : z);
    }
    const Mat& logits = acts.back();
    const double n = static_cast<double>(x.rows());
    Mat delta(logits.rows(), logits.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      const RowVec e = (logits.row(i).array() - mx).exp().matrix();
      const double s = e.sum();
      loss -= logits(i, y[static_cast<std::size_t>(i)]) - mx - std::log(s);
      delta.row(i) = e / s;
      delta(i, y[static_cast<std::size_t>(i)]) -= 1.0;
    }
    loss /= n;
    delta /= n;

    std::vector<Mat> gw(layers);
    std::vector<RowVec> gb(layers);
    for (std::size_t l = layers; l-- > 0;) {
      gw[l] = acts[l].transpose() * delta;
      gb[l] = delta.colwise().sum();
      if (l > 0) {
        delta = (delta * weights_[l].transpose()).cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
    }
    grad.clear();
    for (std::size_t l = 0; l < layers; ++l) {
      grad.insert(grad.end(), gw[l].data(), gw[l].data() + gw[l].size());
      grad.insert(grad.end(), gb[l].data(), gb[l].data() + gb[l].size());
    }
    return loss;
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.insert(out.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
      out.insert(out.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
    }
    return out;
  }

  void set_flat_params(const std::vector<double>& theta) {
    std::size_t at = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(at), weights_[l].size(), weights_[l].data());
      at += static_cast<std::size_t>(weights_[l].size());
      std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(at), biases_[l].size(), biases_[l].data());
      at += static_cast<std::size_t>(biases_[l].size());
    }
  }

  static Mat inputs(Data data) {
    Mat x(static_cast<Eigen::Index>(data.size()), 2);
    for (std::size_t i = 0; i < data.size(); ++i) {
      x(static_cast<Eigen::Index>(i), 0) = data[i].raw[0];
      x(static_cast<Eigen::Index>(i), 1) = data[i].raw[1];
    }
    return x;
  }

  static std::vector<int> targets(Data data) {
    std::vector<int> y;
    y.reserve(data.size());
    for (const auto& d : data) y.push_back(d.label);
    return y;
  }

  int num_classes() const { return k_; }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      layers.push_back({{"rows", weights_[l].rows()},
                        {"cols", weights_[l].cols()},
                        {"w", std::vector<double>(weights_[l].data(), weights_[l].data() + weights_[l].size())},
                        {"b", std::vector<double>(biases_[l].data(), biases_[l].data() + biases_[l].size())}});
    }
    return {{"kind", "mlp"}, {"num_classes", k_}, {"layers", layers}};
  }

  static Mlp from_json(const nlohmann::json& j) {
    Mlp m;
    m.k_ = j.at("num_classes").get<int>();
    for (const auto& l : j.at("layers")) {
      Mat w(l.at("rows").get<Eigen::Index>(), l.at("cols").get<Eigen::Index>());
      const auto wv = l.at("w").get<std::vector<double>>();
      require(static_cast<Eigen::Index>(wv.size()) == w.size(), ErrorCode::protocol, "MLP weight size mismatch");
      std::copy(wv.begin(), wv.end(), w.data());
      const auto bv = l.at("b").get<std::vector<double>>();
      RowVec b(static_cast<Eigen::Index>(bv.size()));
      std::copy(bv.begin(), bv.end(), b.data());
      m.weights_.push_back(std::move(w));
      m.biases_.push_back(std::move(b));
    }
    return m;
  }

 private:
  int k_ = 2;
  std::vector<Mat> weights_;
  std::vector<RowVec> biases_;
};

}  // namespace iclb::baselines
