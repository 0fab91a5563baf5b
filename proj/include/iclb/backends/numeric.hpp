#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "iclb/backend.hpp"
#include "iclb/backends/http.hpp"

namespace iclb {

namespace numeric_wire {

/// {context:[{x:[f,f],y:int}], queries:[[f,f]], num_classes:K} in raw coordinates.
inline nlohmann::json request(const ProbeContext& ctx, std::span<const QueryPoint> queries) {
  nlohmann::json context = nlohmann::json::array();
  for (const auto& e : ctx.examples) context.push_back({{"x", e.raw}, {"y", e.label}});
  nlohmann::json qs = nlohmann::json::array();
  for (const auto& q : queries) qs.push_back(q.raw);
  return nlohmann::json{{"context", context}, {"queries", qs}, {"num_classes", ctx.num_classes}};
}

/// Validates {logits:[[f;K]]} against the expected shape.
inline std::vector<std::vector<double>> parse_reply(const nlohmann::json& reply, std::size_t n_queries, int k) {
  auto bad = [](const std::string& why) { fail(ErrorCode::protocol, "numeric reply: " + why); };
  if (!reply.is_object() || !reply.contains("logits") || !reply.at("logits").is_array()) bad("missing logits array");
  const auto& rows = reply.at("logits");
  if (rows.size() != n_queries) {
    bad("expected " + std::to_string(n_queries) + " rows, got " + std::to_string(rows.size()));
  }
  std::vector<std::vector<double>> out;
  out.reserve(n_queries);
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != static_cast<std::size_t>(k)) bad("row is not a K-vector");
    std::vector<double> v;
    for (const auto& x : row) {
      if (!x.is_number()) bad("non-numeric logit");
      const double d = x.get<double>();
      if (!std::isfinite(d)) bad("non-finite logit");
      v.push_back(d);
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace numeric_wire

/// Numeric-protocol endpoint (POST {endpoint}/predict). Queries are sent in
/// chunks; no prompt rendering is involved.
class NumericBackend : public Backend {
 public:
  struct Options {
    std::string endpoint;
    std::string model_name = "numeric";
    std::size_t chunk_size = 512;
    http::RetryPolicy retry;
  };

  explicit NumericBackend(Options o) : opts_(std::move(o)) {}

  BackendKind kind() const override { return BackendKind::numeric; }
  bool batches_natively() const override { return true; }

  std::string identity() const override {
    return nlohmann::json{{"kind", "numeric"}, {"endpoint", opts_.endpoint}, {"model", opts_.model_name}}.dump();
  }

  std::string request_bytes(const ProbeContext& ctx, const QueryPoint& q) const override {
    return numeric_wire::request(ctx, std::span<const QueryPoint>(&q, 1)).dump();
  }

  ClassLogits fetch(const ProbeContext& ctx, const QueryPoint& q) const override {
    auto rows = call(ctx, std::span<const QueryPoint>(&q, 1));
    return as_logits(std::move(rows.front()));
  }

  std::vector<FetchOutcome> fetch_many(const ProbeContext& ctx, std::span<const QueryPoint> qs) const override {
    std::vector<FetchOutcome> out;
    out.reserve(qs.size());
    const std::size_t chunk = std::max<std::size_t>(opts_.chunk_size, 1);
    for (std::size_t start = 0; start < qs.size(); start += chunk) {
      const auto part = qs.subspan(start, std::min(chunk, qs.size() - start));
      try {
        for (auto& row : call(ctx, part)) out.push_back(FetchOutcome::ok(as_logits(std::move(row))));
      } catch (const Error& e) {
        for (std::size_t i = 0; i < part.size(); ++i) out.push_back(FetchOutcome::failed(e.code(), e.message()));
      }
    }
    return out;
  }

  std::vector<std::vector<double>> call(const ProbeContext& ctx, std::span<const QueryPoint> qs) const {
    if (qs.empty()) return {};
    const auto reply = http::post_json(opts_.endpoint, "/predict", numeric_wire::request(ctx, qs), opts_.retry);
    return numeric_wire::parse_reply(reply, qs.size(), ctx.num_classes);
  }

 private:
  static ClassLogits as_logits(std::vector<double> row) {
    ClassLogits l;
    l.scores = std::move(row);
    l.source = ScoreSource::numeric_head;
    return l;
  }

  Options opts_;
};

/// Raw per-query K-vectors from a numeric backend. Throws on any failure.
inline std::vector<ClassLogits> numeric_classify(const Backend& backend, const ProbeContext& ctx,
                                                 std::span<const QueryPoint> queries) {
  require(backend.kind() == BackendKind::numeric, ErrorCode::config, "numeric_classify needs a numeric backend");
  std::vector<ClassLogits> out;
  for (auto& f : backend.fetch_many(ctx, queries)) {
    if (!f.logits) fail(f.error.value_or(ErrorCode::protocol), f.message);
    out.push_back(std::move(*f.logits));
  }
  return out;
}

}  // namespace iclb
