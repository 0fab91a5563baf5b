#pragma once

// The in-context classifier abstraction. A backend turns (context, query) into
// per-class log-scores; everything else (softmax, tie-break, abstain handling,
// bounded fan-out) is shared here.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "iclb/error.hpp"
#include "iclb/hash.hpp"
#include "iclb/promptfmt.hpp"
#include "iclb/taskgen.hpp"
#include "iclb/types.hpp"

namespace iclb {

enum class BackendKind { completion, numeric, baseline, mock };
enum class ProbeMode { logprob, generation };
enum class ScoreSource { token_logprob, generated_text, numeric_head, hard_label };

NLOHMANN_JSON_SERIALIZE_ENUM(BackendKind, {{BackendKind::completion, "completion"},
                                           {BackendKind::numeric, "numeric"},
                                           {BackendKind::baseline, "baseline"},
                                           {BackendKind::mock, "mock"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ProbeMode, {{ProbeMode::logprob, "logprob"},
                                         {ProbeMode::generation, "generation"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ScoreSource, {{ScoreSource::token_logprob, "token_logprob"},
                                           {ScoreSource::generated_text, "generated_text"},
                                           {ScoreSource::numeric_head, "numeric_head"},
                                           {ScoreSource::hard_label, "hard_label"}})

/// Log-score assigned to a class the backend gave no evidence for.
inline constexpr double kLogFloor = -1e9;

struct TopToken {
  std::string text;
  double logprob = 0.0;
};

struct ClassLogits {
  std::vector<double> scores;
  ScoreSource source = ScoreSource::token_logprob;
  std::vector<TopToken> raw_top_tokens;
  std::optional<std::string> generated;
};

inline void to_json(nlohmann::json& j, const ClassLogits& l) {
  j = nlohmann::json{{"scores", l.scores}, {"source", l.source}};
  if (!l.raw_top_tokens.empty()) {
    nlohmann::json toks = nlohmann::json::array();
    for (const auto& t : l.raw_top_tokens) toks.push_back({t.text, t.logprob});
    j["top_tokens"] = toks;
  }
  if (l.generated) j["generated"] = *l.generated;
}

inline void from_json(const nlohmann::json& j, ClassLogits& l) {
  l.scores = j.at("scores").get<std::vector<double>>();
  l.source = j.at("source").get<ScoreSource>();
  l.raw_top_tokens.clear();
  if (j.contains("top_tokens")) {
    for (const auto& t : j.at("top_tokens")) {
      l.raw_top_tokens.push_back({t.at(0).get<std::string>(), t.at(1).get<double>()});
    }
  }
  l.generated.reset();
  if (j.contains("generated")) l.generated = j.at("generated").get<std::string>();
}

/// Max-shifted softmax.
inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// Lowest index among the maxima.
inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

struct ClassPrediction {
  int cls = 0;
  std::vector<double> probs;
  ClassLogits logits;

  /// Probabilities carry real uncertainty (not a one-hot stand-in).
  bool genuine_probs() const {
    return logits.source == ScoreSource::token_logprob || logits.source == ScoreSource::numeric_head;
  }
};

inline ClassPrediction predict_from_logits(ClassLogits logits) {
  require(!logits.scores.empty(), ErrorCode::protocol, "empty class score vector");
  for (double s : logits.scores) {
    require(!std::isnan(s), ErrorCode::protocol, "NaN class score");
  }
  const bool any_signal = std::any_of(logits.scores.begin(), logits.scores.end(),
                                      [](double s) { return std::isfinite(s) && s > kLogFloor; });
  require(any_signal, ErrorCode::no_label_signal, "no class received a score");
  for (double& s : logits.scores) s = std::max(s, kLogFloor);
  ClassPrediction p;
  p.probs = softmax(logits.scores);
  p.cls = argmax_lowest(p.probs);
  p.logits = std::move(logits);
  return p;
}

/// Reduces a top-k next-token distribution to K class scores: each class takes
/// the best logprob among tokens that prefix (or equal) its match key.
inline ClassLogits logits_from_top_tokens(std::vector<TopToken> tokens, const LabelMap& labels) {
  ClassLogits out;
  out.source = ScoreSource::token_logprob;
  out.scores.assign(static_cast<std::size_t>(labels.size()), kLogFloor);
  for (const auto& t : tokens) {
    if (!std::isfinite(t.logprob)) continue;
    for (int c : labels.classes_for_token(t.text)) {
      auto& s = out.scores[static_cast<std::size_t>(c)];
      s = std::max(s, t.logprob);
    }
  }
  out.raw_top_tokens = std::move(tokens);
  return out;
}

/// One-hot scores from generated text; the first word must equal a match key.
inline ClassLogits logits_from_generation(const std::string& generated, const LabelMap& labels) {
  const auto cls = labels.class_for_word(text::first_word(generated));
  if (!cls) fail(ErrorCode::unparseable_generation, "generated text '" + generated + "' matches no label");
  ClassLogits out;
  out.source = ScoreSource::generated_text;
  out.scores.assign(static_cast<std::size_t>(labels.size()), kLogFloor);
  out.scores[static_cast<std::size_t>(*cls)] = 0.0;
  out.generated = generated;
  return out;
}

/// Everything a backend needs to answer queries against one context set.
struct ProbeContext {
  std::vector<LabeledPoint> examples;
  PromptConfig prompt;
  LabelMap labels;
  AffineScale scale;
  int num_classes = 2;

  static ProbeContext make(std::vector<LabeledPoint> examples, PromptConfig prompt, AffineScale scale = {}) {
    ProbeContext c;
    c.labels = make_label_map(prompt);
    c.num_classes = c.labels.size();
    for (const auto& e : examples) {
      require(e.label >= 0 && e.label < c.num_classes, ErrorCode::label,
              "context label out of range");
    }
    c.examples = std::move(examples);
    c.prompt = std::move(prompt);
    c.scale = scale;
    return c;
  }

  QueryPoint query_at(const Point& raw) const { return {raw, scale.apply(raw)}; }

  std::string fingerprint() const {
    Fingerprint f;
    f.add(nlohmann::json(prompt).dump()).add(nlohmann::json(scale).dump());
    for (const auto& e : examples) {
      f.add(e.raw[0]).add(e.raw[1]).add(e.prompt[0]).add(e.prompt[1]).add(static_cast<std::int64_t>(e.label));
    }
    return f.hex();
  }
};

/// Per-query outcome: logits on success, otherwise the error that stopped it.
struct FetchOutcome {
  std::optional<ClassLogits> logits;
  std::optional<ErrorCode> error;
  std::string message;

  static FetchOutcome ok(ClassLogits l) { return {std::move(l), std::nullopt, {}}; }
  static FetchOutcome failed(ErrorCode c, std::string m) { return {std::nullopt, c, std::move(m)}; }
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendKind kind() const = 0;

  /// Endpoint, model and decode parameters; the prefix of every cache key.
  virtual std::string identity() const = 0;

  /// Bytes that determine the upstream request for one query (prompt text or
  /// numeric payload).
  virtual std::string request_bytes(const ProbeContext& ctx, const QueryPoint& q) const = 0;

  /// Single-query fetch. Throws iclb::Error on failure.
  virtual ClassLogits fetch(const ProbeContext& ctx, const QueryPoint& q) const = 0;

  /// Whether fetch_many should be used instead of a per-query fan-out.
  virtual bool batches_natively() const { return false; }

  virtual std::vector<FetchOutcome> fetch_many(const ProbeContext& ctx, std::span<const QueryPoint> qs) const {
    std::vector<FetchOutcome> out;
    out.reserve(qs.size());
    for (const auto& q : qs) {
      try {
        out.push_back(FetchOutcome::ok(fetch(ctx, q)));
      } catch (const Error& e) {
        out.push_back(FetchOutcome::failed(e.code(), e.message()));
      }
    }
    return out;
  }

  virtual std::size_t max_in_flight() const { return 1; }

  /// Whether probabilities from this backend can feed entropy maps.
  virtual ProbeMode mode() const { return ProbeMode::logprob; }

  std::string fingerprint() const { return sha256_hex(identity()); }
};

using BackendPtr = std::shared_ptr<const Backend>;

inline ClassPrediction classify_query(const Backend& backend, const ProbeContext& ctx, const QueryPoint& q) {
  return predict_from_logits(backend.fetch(ctx, q));
}

struct CellOutcome {
  std::optional<ClassPrediction> prediction;
  std::optional<ErrorCode> error;
  std::string message;

  bool ok() const { return prediction.has_value(); }
};

namespace detail {

inline CellOutcome to_cell(FetchOutcome f) {
  CellOutcome c;
  if (!f.logits) {
    c.error = f.error;
    c.message = std::move(f.message);
    return c;
  }
  try {
    c.prediction = predict_from_logits(std::move(*f.logits));
  } catch (const Error& e) {
    c.error = e.code();
    c.message = e.message();
  }
  return c;
}

}  // namespace detail

/// Classifies every query; results are in query order. Per-query failures are
/// recorded in the outcome instead of aborting the batch. At most
/// backend.max_in_flight() fetches run at once.
inline std::vector<CellOutcome> classify_batch(const Backend& backend, const ProbeContext& ctx,
                                               std::span<const QueryPoint> queries) {
  std::vector<CellOutcome> results(queries.size());
  if (queries.empty()) return results;

  if (backend.batches_natively()) {
    auto fetched = backend.fetch_many(ctx, queries);
    require(fetched.size() == queries.size(), ErrorCode::protocol, "batch result count mismatch");
    for (std::size_t i = 0; i < fetched.size(); ++i) results[i] = detail::to_cell(std::move(fetched[i]));
    return results;
  }

  auto one = [&](std::size_t i) {
    try {
      results[i] = detail::to_cell(FetchOutcome::ok(backend.fetch(ctx, queries[i])));
    } catch (const Error& e) {
      results[i] = detail::to_cell(FetchOutcome::failed(e.code(), e.message()));
    } catch (const std::exception& e) {
      results[i] = detail::to_cell(FetchOutcome::failed(ErrorCode::protocol, e.what()));
    }
  };

  const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(backend.max_in_flight(), 1), queries.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < queries.size(); ++i) one(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < queries.size(); i = next.fetch_add(1)) one(i);
    });
  }
  pool.clear();
  return results;
}

}  // namespace iclb
