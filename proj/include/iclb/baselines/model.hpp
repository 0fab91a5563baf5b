#pragma once

// Uniform handle over the five classical baselines, plus the adapter that
// exposes a baseline through the Backend interface.

#include <nlohmann/json.hpp>

#include <memory>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "iclb/backend.hpp"
#include "iclb/baselines/dtree.hpp"
#include "iclb/baselines/knn.hpp"
#include "iclb/baselines/logreg.hpp"
#include "iclb/baselines/mlp.hpp"
#include "iclb/baselines/svm.hpp"

namespace iclb::baselines {

/// Kind plus per-kind hyperparameters (JSON object; missing keys take the
/// defaults: k=5, max_depth=3, hidden=[256,256], max_iter=1000, rbf gamma=0.2).
struct ClassifierSpec {
  ModelKind kind = ModelKind::logreg;
  nlohmann::json params = nlohmann::json::object();

  LogRegParams logreg() const {
    LogRegParams p;
    p.l2 = params.value("l2", p.l2);
    p.max_iter = params.value("max_iter", p.max_iter);
    return p;
  }
  MlpParams mlp(std::uint64_t seed) const {
    MlpParams p;
    p.hidden = params.value("hidden", p.hidden);
    p.max_iter = params.value("max_iter", p.max_iter);
    p.lr = params.value("lr", p.lr);
    p.seed = params.value("seed", seed);
    return p;
  }
  SvmParams svm() const {
    SvmParams p;
    if (params.contains("kernel")) p.kernel = params.at("kernel").get<Kernel>();
    p.C = params.value("C", p.C);
    p.tol = params.value("tol", p.tol);
    return p;
  }
  int knn_k() const { return params.value("k", 5); }
  int max_depth() const { return params.value("max_depth", 3); }

  std::string describe() const { return nlohmann::json{{"kind", kind}, {"params", params}}.dump(); }
};

/// Parses "logreg", "knn", "dtree", "mlp", "svm" (RBF) and "svm-poly".
inline ClassifierSpec classifier_from_name(const std::string& name) {
  ClassifierSpec s;
  if (name == "logreg") s.kind = ModelKind::logreg;
  else if (name == "knn") s.kind = ModelKind::knn;
  else if (name == "dtree" || name == "tree") s.kind = ModelKind::dtree;
  else if (name == "mlp") s.kind = ModelKind::mlp;
  else if (name == "svm" || name == "svm-rbf") s.kind = ModelKind::svm;
  else if (name == "svm-poly") {
    s.kind = ModelKind::svm;
    s.params["kernel"] = Kernel::poly();
  } else {
    fail(ErrorCode::config, "unknown baseline '" + name + "'");
  }
  return s;
}

class FittedModel {
 public:
  using Variant = std::variant<LogisticRegression, KNearestNeighbors, DecisionTree, Mlp, Svm>;

  FittedModel() = default;
  explicit FittedModel(Variant m) : model_(std::move(m)) {}

  int predict(const Point& x) const {
    return std::visit([&](const auto& m) { return m.predict(x); }, model_);
  }

  int num_classes() const {
    return std::visit([](const auto& m) { return m.num_classes(); }, model_);
  }

  /// Log-probabilities where the model has them (logreg, MLP); one-hot
  /// hard-label scores otherwise.
  ClassLogits scores(const Point& x) const {
    ClassLogits l;
    if (const auto* lr = std::get_if<LogisticRegression>(&model_)) {
      l.scores = lr->log_probs(x);
      l.source = ScoreSource::numeric_head;
      return l;
    }
    if (const auto* mlp = std::get_if<Mlp>(&model_)) {
      l.scores = mlp->log_probs(x);
      l.source = ScoreSource::numeric_head;
      return l;
    }
    l.source = ScoreSource::hard_label;
    l.scores.assign(static_cast<std::size_t>(num_classes()), kLogFloor);
    l.scores[static_cast<std::size_t>(predict(x))] = 0.0;
    return l;
  }

  double accuracy(Data data) const {
    if (data.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& d : data) ok += predict(d.raw) == d.label;
    return static_cast<double>(ok) / static_cast<double>(data.size());
  }

  nlohmann::json to_json() const {
    return std::visit([](const auto& m) { return m.to_json(); }, model_);
  }

  static FittedModel from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<ModelKind>();
    switch (kind) {
      case ModelKind::logreg: return FittedModel(LogisticRegression::from_json(j));
      case ModelKind::knn: return FittedModel(KNearestNeighbors::from_json(j));
      case ModelKind::dtree: return FittedModel(DecisionTree::from_json(j));
      case ModelKind::mlp: return FittedModel(Mlp::from_json(j));
      case ModelKind::svm: return FittedModel(Svm::from_json(j));
    }
    fail(ErrorCode::protocol, "unknown model kind");
  }

  const Variant& variant() const { return model_; }
  TrainReport report;

 private:
  Variant model_;
};

inline FittedModel fit_model(const ClassifierSpec& spec, Data data, int num_classes, std::uint64_t seed = 0) {
  switch (spec.kind) {
    case ModelKind::logreg: {
      LogisticRegression m;
      const auto r = m.fit(data, num_classes, spec.logreg());
      FittedModel f(std::move(m));
      f.report = r;
      return f;
    }
    case ModelKind::knn: {
      KNearestNeighbors m(spec.knn_k());
      m.fit(data, num_classes);
      return FittedModel(std::move(m));
    }
    case ModelKind::dtree: {
      DecisionTree m(spec.max_depth());
      m.fit(data, num_classes);
      return FittedModel(std::move(m));
    }
    case ModelKind::mlp: {
      Mlp m;
      const auto r = m.fit(data, num_classes, spec.mlp(seed));
      FittedModel f(std::move(m));
      f.report = r;
      return f;
    }
    case ModelKind::svm: {
      Svm m;
      const auto r = m.fit(data, num_classes, spec.svm());
      FittedModel f(std::move(m));
      f.report = r;
      return f;
    }
  }
  fail(ErrorCode::config, "unknown model kind");
}

}  // namespace iclb::baselines

namespace iclb {

/// Fits the baseline on the context's raw coordinates and answers queries in
/// raw space. The fitted model for the most recent context is memoized.
class BaselineBackend : public Backend {
 public:
  BaselineBackend(baselines::ClassifierSpec spec, std::uint64_t seed = 0, std::string name = {})
      : spec_(std::move(spec)), seed_(seed), name_(std::move(name)) {}

  BackendKind kind() const override { return BackendKind::baseline; }
  bool batches_natively() const override { return true; }

  std::string identity() const override {
    return nlohmann::json{{"kind", "baseline"}, {"model", spec_.describe()}, {"seed", seed_}}.dump();
  }

  std::string request_bytes(const ProbeContext& ctx, const QueryPoint& q) const override {
    return ctx.fingerprint() + "|" + nlohmann::json(q.raw).dump();
  }

  ClassLogits fetch(const ProbeContext& ctx, const QueryPoint& q) const override {
    return model_for(ctx)->scores(q.raw);
  }

  std::vector<FetchOutcome> fetch_many(const ProbeContext& ctx, std::span<const QueryPoint> qs) const override {
    std::vector<FetchOutcome> out;
    out.reserve(qs.size());
    std::shared_ptr<const baselines::FittedModel> model;
    try {
      model = model_for(ctx);
    } catch (const Error& e) {
      for (std::size_t i = 0; i < qs.size(); ++i) out.push_back(FetchOutcome::failed(e.code(), e.message()));
      return out;
    }
    for (const auto& q : qs) out.push_back(FetchOutcome::ok(model->scores(q.raw)));
    return out;
  }

  std::shared_ptr<const baselines::FittedModel> model_for(const ProbeContext& ctx) const {
    const std::string fp = ctx.fingerprint();
    std::lock_guard lock(mu_);
    if (fitted_ && fitted_fp_ == fp) return fitted_;
    fitted_ = std::make_shared<const baselines::FittedModel>(
        baselines::fit_model(spec_, ctx.examples, ctx.num_classes, seed_));
    fitted_fp_ = fp;
    return fitted_;
  }

  const baselines::ClassifierSpec& spec() const { return spec_; }

 private:
  baselines::ClassifierSpec spec_;
  std::uint64_t seed_;
  std::string name_;
  mutable std::mutex mu_;
  mutable std::shared_ptr<const baselines::FittedModel> fitted_;
  mutable std::string fitted_fp_;
};

}  // namespace iclb
