#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "iclb/backend.hpp"
#include "iclb/promptfmt.hpp"

namespace iclb {

/// Per-class log-scores for a parsed prompt; -inf means the class token is
/// absent from the mock's reply.
using MockScorer = std::function<std::vector<double>(const ParsedPrompt&, int num_classes)>;

/// Scripted text backend. It renders the real prompt, parses it back like an
/// upstream server would, and answers with label tokens, so the whole text
/// path (rendering, token matching, caching) is exercised offline. Every
/// upstream call is logged.
class MockBackend : public Backend {
 public:
  struct Options {
    std::string name = "mock";
    ProbeMode mode = ProbeMode::logprob;
    std::size_t max_in_flight = 8;
    std::chrono::microseconds latency{0};
    std::function<bool(const ParsedPrompt&)> fail_when;       // transport failure
    std::function<bool(const ParsedPrompt&)> no_labels_when;  // reply without label tokens
  };

  MockBackend(MockScorer scorer, Options opts) : scorer_(std::move(scorer)), opts_(std::move(opts)) {}

  BackendKind kind() const override { return BackendKind::mock; }
  ProbeMode mode() const override { return opts_.mode; }
  std::size_t max_in_flight() const override { return opts_.max_in_flight; }

  std::string identity() const override {
    return "mock|" + opts_.name + "|" + (opts_.mode == ProbeMode::logprob ? "logprob" : "generation");
  }

  std::string request_bytes(const ProbeContext& ctx, const QueryPoint& q) const override {
    return render_prompt(ctx.examples, q.prompt, ctx.prompt);
  }

  ClassLogits fetch(const ProbeContext& ctx, const QueryPoint& q) const override {
    const std::string prompt = request_bytes(ctx, q);
    const int now = ++in_flight_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { --n; }
    } leave{in_flight_};
    {
      std::lock_guard lock(log_mu_);
      calls_.push_back(prompt);
    }
    if (opts_.latency.count() > 0) std::this_thread::sleep_for(opts_.latency);

    const ParsedPrompt parsed = parse_prompt(prompt, ctx.prompt);
    if (opts_.fail_when && opts_.fail_when(parsed)) {
      fail(ErrorCode::backend_unavailable, "mock transport failure");
    }
    if (opts_.no_labels_when && opts_.no_labels_when(parsed)) {
      return logits_from_top_tokens({{" ???", -0.01}}, ctx.labels);
    }
    const std::vector<double> scores = scorer_(parsed, ctx.num_classes);
    require(static_cast<int>(scores.size()) == ctx.num_classes, ErrorCode::protocol,
            "mock scorer returned the wrong number of classes");

    if (opts_.mode == ProbeMode::generation) {
      const int cls = argmax_lowest(scores);
      return logits_from_generation(ctx.prompt.labels[static_cast<std::size_t>(cls)] + "\n", ctx.labels);
    }
    return logits_from_top_tokens(as_tokens(scores, ctx), ctx.labels);
  }

  std::vector<std::string> calls() const {
    std::lock_guard lock(log_mu_);
    return calls_;
  }
  std::size_t call_count() const {
    std::lock_guard lock(log_mu_);
    return calls_.size();
  }
  int peak_in_flight() const { return peak_.load(); }
  void reset_log() {
    std::lock_guard lock(log_mu_);
    calls_.clear();
    peak_ = 0;
  }

 private:
  /// Log-normalized over the present classes, highest first, each emitted as
  /// " <first word of label>" like a BPE tokenizer would.
  static std::vector<TopToken> as_tokens(const std::vector<double>& scores, const ProbeContext& ctx) {
    double m = -std::numeric_limits<double>::infinity();
    for (double s : scores) m = std::max(m, s);
    if (!std::isfinite(m)) return {};
    double z = 0.0;
    for (double s : scores) {
      if (std::isfinite(s)) z += std::exp(s - m);
    }
    const double lse = m + std::log(z);
    std::vector<TopToken> toks;
    for (std::size_t c = 0; c < scores.size(); ++c) {
      if (!std::isfinite(scores[c])) continue;
      toks.push_back({" " + std::string(text::first_word(ctx.prompt.labels[c])), scores[c] - lse});
    }
    std::stable_sort(toks.begin(), toks.end(),
                     [](const TopToken& a, const TopToken& b) { return a.logprob > b.logprob; });
    return toks;
  }

  MockScorer scorer_;
  Options opts_;
  mutable std::mutex log_mu_;
  mutable std::vector<std::string> calls_;
  mutable std::atomic<int> in_flight_{0};
  mutable std::atomic<int> peak_{0};
};

namespace mock_scripts {

inline std::vector<double> one_hot(int cls, int k) {
  std::vector<double> s(static_cast<std::size_t>(k), -std::numeric_limits<double>::infinity());
  s[static_cast<std::size_t>(cls)] = 0.0;
  return s;
}

/// class 1 iff prompt x0 > threshold (one-hot).
inline MockScorer threshold(double t = 50.0) {
  return [t](const ParsedPrompt& p, int k) { return one_hot(p.query[0] > t ? 1 : 0, k); };
}

inline MockScorer constant(int cls = 0) {
  return [cls](const ParsedPrompt&, int k) { return one_hot(cls, k); };
}

/// Logistic in (x0 - t) / width: maximal uncertainty on the line x0 = t.
inline MockScorer soft_threshold(double t = 50.0, double width = 5.0) {
  return [t, width](const ParsedPrompt& p, int k) {
    std::vector<double> s(static_cast<std::size_t>(k), -std::numeric_limits<double>::infinity());
    s[0] = 0.0;
    s[1] = (p.query[0] - t) / width;
    return s;
  };
}

/// Gaussian scores around per-class centroids of the prompt's own context.
inline MockScorer nearest_centroid(double bandwidth = 10.0) {
  return [bandwidth](const ParsedPrompt& p, int k) {
    std::vector<double> sx(static_cast<std::size_t>(k), 0.0), sy(sx), n(sx);
    for (const auto& [x, y] : p.context) {
      sx[static_cast<std::size_t>(y)] += x[0];
      sy[static_cast<std::size_t>(y)] += x[1];
      n[static_cast<std::size_t>(y)] += 1.0;
    }
    std::vector<double> s(static_cast<std::size_t>(k), -std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < s.size(); ++c) {
      if (n[c] == 0.0) continue;
      const double dx = p.query[0] - sx[c] / n[c];
      const double dy = p.query[1] - sy[c] / n[c];
      s[c] = -(dx * dx + dy * dy) / (2.0 * bandwidth * bandwidth);
    }
    return s;
  };
}

}  // namespace mock_scripts

}  // namespace iclb
