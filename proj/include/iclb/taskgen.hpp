#pragma once

// Synthetic 2-D classification tasks: linear (Gaussian clusters on square
// vertices), concentric circles and interleaving moons, plus prompt-space
// scaling and balanced context/test splits.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iclb/error.hpp"
#include "iclb/hash.hpp"
#include "iclb/rng.hpp"
#include "iclb/types.hpp"

namespace iclb {

enum class TaskKind { linear, circle, moon };
enum class Regime { train, test };

NLOHMANN_JSON_SERIALIZE_ENUM(TaskKind, {{TaskKind::linear, "linear"},
                                        {TaskKind::circle, "circle"},
                                        {TaskKind::moon, "moon"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Regime, {{Regime::train, "train"}, {Regime::test, "test"}})

struct ParamRange {
  double lo;
  double hi;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Generator parameter intervals per regime. The train and test intervals for
/// class_sep and factor are disjoint so evaluation tasks are never seen in
/// training.
struct RegimeRanges {
  ParamRange class_sep;
  ParamRange factor;
  ParamRange moon_noise;
};

inline RegimeRanges regime_ranges(Regime r) {
  if (r == Regime::train) return {{1.5, 2.0}, {0.1, 0.4}, {0.05, 0.1}};
  return {{1.0, 1.4}, {0.5, 0.9}, {0.1, 0.2}};
}

struct TaskSpec {
  TaskKind kind = TaskKind::linear;
  int num_classes = 2;
  int n_points = 356;
  double class_sep = 1.5;   // linear
  double cluster_std = 0.3; // linear
  double factor = 0.5;      // circle
  double noise = 0.05;      // circle, moon
  bool random_angles = false;
  std::uint64_t seed = 0;
  Regime regime = Regime::train;

  /// Fills the regime-dependent parameters by drawing from the regime's
  /// intervals under the seed's "task-params" substream.
  static TaskSpec sampled(TaskKind kind, Regime regime, std::uint64_t seed, int n_points,
                          int num_classes = 2) {
    TaskSpec s;
    s.kind = kind;
    s.regime = regime;
    s.seed = seed;
    s.n_points = n_points;
    s.num_classes = num_classes;
    Rng rng = substream(seed, "task-params");
    const RegimeRanges rr = regime_ranges(regime);
    s.class_sep = uniform_real(rng, rr.class_sep.lo, rr.class_sep.hi);
    s.factor = uniform_real(rng, rr.factor.lo, rr.factor.hi);
    s.noise = kind == TaskKind::moon ? uniform_real(rng, rr.moon_noise.lo, rr.moon_noise.hi) : 0.05;
    return s;
  }
};

inline void to_json(nlohmann::json& j, const TaskSpec& s) {
  j = nlohmann::json{{"kind", s.kind},       {"num_classes", s.num_classes},
                     {"n_points", s.n_points}, {"class_sep", s.class_sep},
                     {"cluster_std", s.cluster_std}, {"factor", s.factor},
                     {"noise", s.noise},     {"random_angles", s.random_angles},
                     {"seed", s.seed},       {"regime", s.regime}};
}

inline void from_json(const nlohmann::json& j, TaskSpec& s) {
  TaskSpec d;
  s.kind = j.value("kind", d.kind);
  s.num_classes = j.value("num_classes", d.num_classes);
  s.n_points = j.value("n_points", d.n_points);
  s.class_sep = j.value("class_sep", d.class_sep);
  s.cluster_std = j.value("cluster_std", d.cluster_std);
  s.factor = j.value("factor", d.factor);
  s.noise = j.value("noise", d.noise);
  s.random_angles = j.value("random_angles", d.random_angles);
  s.seed = j.value("seed", d.seed);
  s.regime = j.value("regime", d.regime);
}

/// Per-dimension affine map from raw coordinates to prompt space. The default
/// value is the identity (raw-coordinate mode).
struct AffineScale {
  bool identity = true;
  Point src_min{0.0, 0.0};
  Point src_max{1.0, 1.0};
  double lo = 0.0;
  double hi = 100.0;
  bool integer_mode = false;
  std::array<bool, 2> degenerate{false, false};

  Point apply(const Point& raw) const {
    if (identity) return raw;
    Point out{};
    for (int d = 0; d < 2; ++d) {
      double v;
      if (degenerate[d]) {
        v = 0.5 * (lo + hi);
      } else {
        v = lo + (raw[d] - src_min[d]) * (hi - lo) / (src_max[d] - src_min[d]);
      }
      out[d] = integer_mode ? std::round(v) : v;
    }
    return out;
  }
};

inline void to_json(nlohmann::json& j, const AffineScale& s) {
  j = nlohmann::json{{"identity", s.identity},         {"src_min", s.src_min},
                     {"src_max", s.src_max},           {"lo", s.lo},
                     {"hi", s.hi},                     {"integer_mode", s.integer_mode},
                     {"degenerate", s.degenerate}};
}

inline void from_json(const nlohmann::json& j, AffineScale& s) {
  s.identity = j.at("identity").get<bool>();
  s.src_min = j.at("src_min").get<Point>();
  s.src_max = j.at("src_max").get<Point>();
  s.lo = j.at("lo").get<double>();
  s.hi = j.at("hi").get<double>();
  s.integer_mode = j.at("integer_mode").get<bool>();
  s.degenerate = j.at("degenerate").get<std::array<bool, 2>>();
}

struct TaskInstance {
  TaskSpec spec;
  std::vector<LabeledPoint> points;
  std::vector<std::size_t> context;  // prompt order
  std::vector<std::size_t> test;
  AffineScale scale;
  std::vector<std::string> warnings;

  std::vector<LabeledPoint> context_points() const {
    std::vector<LabeledPoint> out;
    out.reserve(context.size());
    for (std::size_t i : context) out.push_back(points[i]);
    return out;
  }
  std::vector<LabeledPoint> test_points() const {
    std::vector<LabeledPoint> out;
    out.reserve(test.size());
    for (std::size_t i : test) out.push_back(points[i]);
    return out;
  }
};

namespace detail {

inline void check_common(const TaskSpec& spec) {
  require(spec.num_classes >= 2, ErrorCode::unsupported_class_count,
          "need at least 2 classes, got " + std::to_string(spec.num_classes));
  require(spec.n_points >= spec.num_classes, ErrorCode::size,
          "n_points must be at least num_classes");
  require(spec.n_points % spec.num_classes == 0, ErrorCode::balance,
          "n_points=" + std::to_string(spec.n_points) + " not divisible by K=" +
              std::to_string(spec.num_classes));
}

inline TaskInstance make_instance(const TaskSpec& spec) {
  TaskInstance t;
  t.spec = spec;
  t.points.reserve(static_cast<std::size_t>(spec.n_points));
  return t;
}

inline void add_point(TaskInstance& t, Point raw, int label) {
  t.points.push_back(LabeledPoint{raw, raw, label});
}

/// Angles for one class: evenly spaced (half-open over a full turn, closed over
/// a half turn) or uniform random.
inline std::vector<double> class_angles(int count, double span, bool closed, bool random, Rng& rng) {
  std::vector<double> a(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    if (random) {
      a[k] = uniform_real(rng, 0.0, span);
    } else if (closed) {
      a[k] = count > 1 ? span * k / (count - 1) : 0.0;
    } else {
      a[k] = span * k / count;
    }
  }
  return a;
}

}  // namespace detail

/// Square vertex for class `c` in Gray-code order starting at (+,+):
/// (+,+), (+,-), (-,-), (-,+).
inline Point linear_vertex(int c, double class_sep) {
  const int g = c ^ (c >> 1);
  const double s0 = (g & 2) ? -1.0 : 1.0;
  const double s1 = (g & 1) ? -1.0 : 1.0;
  return {s0 * class_sep, s1 * class_sep};
}

inline TaskInstance gen_linear(const TaskSpec& spec) {
  require(spec.kind == TaskKind::linear, ErrorCode::param, "gen_linear needs kind=linear");
  require(spec.num_classes <= 4, ErrorCode::unsupported_class_count,
          "linear tasks support at most 4 classes (square vertices)");
  detail::check_common(spec);
  require(spec.class_sep > 0.0, ErrorCode::param, "class_sep must be positive");
  require(spec.cluster_std >= 0.0, ErrorCode::param, "cluster_std must be non-negative");

  TaskInstance t = detail::make_instance(spec);
  Rng rng = substream(spec.seed, "task-gen");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int per_class = spec.n_points / spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c) {
    const Point center = linear_vertex(c, spec.class_sep);
    for (int k = 0; k < per_class; ++k) {
      const double dx = normal(rng);
      const double dy = normal(rng);
      detail::add_point(t, {center[0] + spec.cluster_std * dx, center[1] + spec.cluster_std * dy}, c);
    }
  }
  return t;
}

inline TaskInstance gen_circles(const TaskSpec& spec) {
  require(spec.kind == TaskKind::circle, ErrorCode::param, "gen_circles needs kind=circle");
  require(spec.num_classes == 2, ErrorCode::unsupported_class_count, "circle tasks are binary");
  detail::check_common(spec);
  require(spec.factor > 0.0 && spec.factor < 1.0, ErrorCode::param,
          "factor must lie in (0,1), got " + std::to_string(spec.factor));
  require(spec.noise >= 0.0, ErrorCode::param, "noise must be non-negative");

  TaskInstance t = detail::make_instance(spec);
  Rng rng = substream(spec.seed, "task-gen");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int per_class = spec.n_points / 2;
  for (int c = 0; c < 2; ++c) {
    const double radius = c == 0 ? 1.0 : spec.factor;
    const auto angles =
        detail::class_angles(per_class, 2.0 * std::numbers::pi, false, spec.random_angles, rng);
    for (double a : angles) {
      Point p{radius * std::cos(a), radius * std::sin(a)};
      if (spec.noise > 0.0) {
        p[0] += spec.noise * normal(rng);
        p[1] += spec.noise * normal(rng);
      }
      detail::add_point(t, p, c);
    }
  }
  return t;
}

inline TaskInstance gen_moons(const TaskSpec& spec) {
  require(spec.kind == TaskKind::moon, ErrorCode::param, "gen_moons needs kind=moon");
  require(spec.num_classes == 2, ErrorCode::unsupported_class_count, "moon tasks are binary");
  detail::check_common(spec);
  require(spec.noise >= 0.0, ErrorCode::param, "noise must be non-negative");

  TaskInstance t = detail::make_instance(spec);
  Rng rng = substream(spec.seed, "task-gen");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int per_class = spec.n_points / 2;
  for (int c = 0; c < 2; ++c) {
    const auto angles = detail::class_angles(per_class, std::numbers::pi, true, spec.random_angles, rng);
    for (double a : angles) {
      Point p = c == 0 ? Point{std::cos(a), std::sin(a)} : Point{1.0 - std::cos(a), 0.5 - std::sin(a)};
      if (spec.noise > 0.0) {
        p[0] += spec.noise * normal(rng);
        p[1] += spec.noise * normal(rng);
      }
      detail::add_point(t, p, c);
    }
  }
  return t;
}

inline TaskInstance generate(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::linear: return gen_linear(spec);
    case TaskKind::circle: return gen_circles(spec);
    case TaskKind::moon: return gen_moons(spec);
  }
  fail(ErrorCode::param, "unknown task kind");
}

/// Maps each dimension's observed [min, max] onto [lo, hi]. A constant
/// dimension maps to the midpoint and records a DegenerateDimension warning.
inline TaskInstance scale_to_prompt_space(TaskInstance task, double lo = 0.0, double hi = 100.0,
                                          bool integer_mode = true) {
  require(!task.points.empty(), ErrorCode::size, "cannot scale an empty task");
  require(hi > lo, ErrorCode::param, "prompt range must satisfy hi > lo");
  AffineScale s;
  s.identity = false;
  s.lo = lo;
  s.hi = hi;
  s.integer_mode = integer_mode;
  for (int d = 0; d < 2; ++d) {
    double mn = task.points.front().raw[d];
    double mx = mn;
    for (const auto& p : task.points) {
      mn = std::min(mn, p.raw[d]);
      mx = std::max(mx, p.raw[d]);
    }
    s.src_min[d] = mn;
    s.src_max[d] = mx;
    if (!(mx > mn)) {
      s.degenerate[d] = true;
      task.warnings.push_back("DegenerateDimension: dimension " + std::to_string(d) +
                              " is constant; mapped to the range midpoint");
    }
  }
  task.scale = s;
  for (auto& p : task.points) p.prompt = s.apply(p.raw);
  return task;
}

/// Balanced context draw plus a random held-out test set from the remaining
/// points. The context is returned in a shuffled prompt order.
inline TaskInstance split_balanced(TaskInstance task, int n_context, int n_test, std::uint64_t seed) {
  const int k = task.spec.num_classes;
  require(n_context >= 0 && n_test >= 0, ErrorCode::size, "split sizes must be non-negative");
  require(n_context % k == 0, ErrorCode::size,
          "n_context=" + std::to_string(n_context) + " not divisible by K=" + std::to_string(k));
  require(static_cast<std::size_t>(n_context) + static_cast<std::size_t>(n_test) <= task.points.size(),
          ErrorCode::size,
          "n_context + n_test = " + std::to_string(n_context + n_test) + " exceeds " +
              std::to_string(task.points.size()) + " points");

  Rng rng = substream(seed, "split");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < task.points.size(); ++i) {
    by_class[static_cast<std::size_t>(task.points[i].label)].push_back(i);
  }
  const std::size_t per_class = static_cast<std::size_t>(n_context / k);
  std::vector<std::size_t> context;
  std::vector<std::size_t> rest;
  for (auto& members : by_class) {
    require(members.size() >= per_class, ErrorCode::size,
            "a class has fewer than n_context/K points");
    fisher_yates(members, rng);
    context.insert(context.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
    rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(per_class), members.end());
  }
  fisher_yates(context, rng);
  fisher_yates(rest, rng);
  rest.resize(static_cast<std::size_t>(n_test));
  task.context = std::move(context);
  task.test = std::move(rest);
  return task;
}

/// Shrinks an existing balanced context to its first n_context/K examples per
/// class, preserving prompt order. Nested prefixes share one test set.
inline TaskInstance take_context_prefix(TaskInstance task, int n_context) {
  const int k = task.spec.num_classes;
  require(n_context >= 0 && n_context % k == 0, ErrorCode::size,
          "n_context must be a non-negative multiple of K");
  const std::size_t quota = static_cast<std::size_t>(n_context / k);
  std::vector<std::size_t> taken(static_cast<std::size_t>(k), 0);
  std::vector<std::size_t> out;
  for (std::size_t idx : task.context) {
    auto& n = taken[static_cast<std::size_t>(task.points[idx].label)];
    if (n < quota) {
      ++n;
      out.push_back(idx);
    }
  }
  require(out.size() == static_cast<std::size_t>(n_context), ErrorCode::size,
          "existing context too small for the requested prefix");
  task.context = std::move(out);
  return task;
}

inline nlohmann::json task_to_json(const TaskInstance& t) {
  std::vector<std::string> split(t.points.size(), "unused");
  for (std::size_t i : t.context) split[i] = "context";
  for (std::size_t i : t.test) split[i] = "test";
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    pts.push_back({{"x", t.points[i].raw}, {"y", t.points[i].label}, {"split", split[i]}});
  }
  return nlohmann::json{{"spec", t.spec},   {"points", pts},         {"scale", t.scale},
                        {"context", t.context}, {"test", t.test}, {"warnings", t.warnings}};
}

inline TaskInstance task_from_json(const nlohmann::json& j) {
  TaskInstance t;
  t.spec = j.at("spec").get<TaskSpec>();
  t.scale = j.at("scale").get<AffineScale>();
  for (const auto& p : j.at("points")) {
    const Point raw = p.at("x").get<Point>();
    t.points.push_back(LabeledPoint{raw, t.scale.apply(raw), p.at("y").get<int>()});
  }
  if (j.contains("context")) {
    t.context = j.at("context").get<std::vector<std::size_t>>();
    t.test = j.at("test").get<std::vector<std::size_t>>();
  } else {
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      const auto s = j.at("points")[i].at("split").get<std::string>();
      if (s == "context") t.context.push_back(i);
      if (s == "test") t.test.push_back(i);
    }
  }
  t.warnings = j.value("warnings", std::vector<std::string>{});
  return t;
}

inline std::string task_fingerprint(const TaskInstance& t) { return sha256_hex(task_to_json(t).dump()); }

}  // namespace iclb
