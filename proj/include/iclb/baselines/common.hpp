#pragma once

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <vector>

#include "iclb/error.hpp"
#include "iclb/types.hpp"

namespace iclb::baselines {

enum class ModelKind { logreg, knn, dtree, mlp, svm };

NLOHMANN_JSON_SERIALIZE_ENUM(ModelKind, {{ModelKind::logreg, "logreg"},
                                         {ModelKind::knn, "knn"},
                                         {ModelKind::dtree, "dtree"},
                                         {ModelKind::mlp, "mlp"},
                                         {ModelKind::svm, "svm"}})

struct TrainReport {
  int iterations = 0;
  double final_loss = 0.0;
  bool converged = false;
  double wall_seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  j = nlohmann::json{{"iterations", r.iterations}, {"final_loss", r.final_loss},
                     {"converged", r.converged}, {"wall_seconds", r.wall_seconds}};
}

using Data = std::span<const LabeledPoint>;

inline int infer_classes(Data data) {
  int k = 0;
  for (const auto& p : data) k = std::max(k, p.label + 1);
  return k;
}

inline std::vector<int> class_counts(Data data, int k) {
  std::vector<int> n(static_cast<std::size_t>(k), 0);
  for (const auto& p : data) {
    require(p.label >= 0 && p.label < k, ErrorCode::label, "training label out of range");
    ++n[static_cast<std::size_t>(p.label)];
  }
  return n;
}

}  // namespace iclb::baselines
