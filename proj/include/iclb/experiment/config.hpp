#pragma once

// Experiment configuration: TOML or JSON, ${VAR} interpolation, exhaustive
// validation, and construction of the configured backends.

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iclb/active.hpp"
#include "iclb/backends/cache.hpp"
#include "iclb/backends/completion.hpp"
#include "iclb/backends/mock.hpp"
#include "iclb/backends/numeric.hpp"
#include "iclb/baselines/model.hpp"
#include "iclb/promptfmt.hpp"
#include "iclb/taskgen.hpp"

namespace iclb::experiment {

using nlohmann::json;

struct TaskEntry {
  std::string name;
  TaskSpec spec;  // seed is replaced per run
  std::vector<std::uint64_t> seeds;
  bool sampled = false;  // draw class_sep / factor / noise from spec.regime per seed

  TaskSpec for_seed(std::uint64_t seed) const {
    if (sampled) return TaskSpec::sampled(spec.kind, spec.regime, seed, spec.n_points, spec.num_classes);
    TaskSpec s = spec;
    s.seed = seed;
    return s;
  }
};

struct BackendEntry {
  std::string name;
  std::string type;  // mock | completion | numeric | baseline
  json params = json::object();
};

struct PromptVariant {
  std::string name;
  PromptConfig prompt;  // ordering_seed set per expansion
};

struct PromptSpace {
  bool enabled = true;
  double lo = 0.0;
  double hi = 100.0;
  bool integer_mode = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<TaskEntry> tasks;
  std::vector<BackendEntry> backends;
  std::vector<PromptVariant> prompts;  // one entry per (label set, ordering seed)
  std::vector<int> n_context;
  int grid_G = 50;
  int n_test = 100;
  std::filesystem::path outputs = "out";
  std::optional<std::filesystem::path> cache;  // unset disables caching
  PromptSpace prompt_space;
  std::optional<ActiveConfig> active;
  json source;  // the validated, interpolated document

  std::string fingerprint() const { return sha256_hex(source.dump()); }
  const BackendEntry* backend(const std::string& name) const {
    for (const auto& b : backends) {
      if (b.name == name) return &b;
    }
    return nullptr;
  }
};

namespace detail {

inline json toml_to_json(const toml::node& n) {
  if (const auto* t = n.as_table()) {
    json o = json::object();
    for (const auto& [k, v] : *t) o[std::string(k.str())] = toml_to_json(v);
    return o;
  }
  if (const auto* a = n.as_array()) {
    json arr = json::array();
    for (const auto& v : *a) arr.push_back(toml_to_json(v));
    return arr;
  }
  if (const auto* s = n.as_string()) return s->get();
  if (const auto* i = n.as_integer()) return i->get();
  if (const auto* d = n.as_floating_point()) return d->get();
  if (const auto* b = n.as_boolean()) return b->get();
  std::ostringstream os;
  if (const auto* v = n.as_date()) os << v->get();
  else if (const auto* v = n.as_time()) os << v->get();
  else if (const auto* v = n.as_date_time()) os << v->get();
  return os.str();
}

/// Replaces ${NAME} in every string with the environment value.
inline void interpolate(json& j, std::vector<std::string>& errors, const std::string& where = "") {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) interpolate(it.value(), errors, where + "." + it.key());
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) interpolate(j[i], errors, where + "[" + std::to_string(i) + "]");
  } else if (j.is_string()) {
    std::string s = j.get<std::string>();
    std::string out;
    std::size_t pos = 0;
    while (true) {
      const std::size_t open = s.find("${", pos);
      if (open == std::string::npos) break;
      const std::size_t close = s.find('}', open);
      if (close == std::string::npos) {
        errors.push_back(where + ": unterminated ${ in '" + s + "'");
        return;
      }
      const std::string var = s.substr(open + 2, close - open - 2);
      out += s.substr(pos, open - pos);
      if (const char* v = std::getenv(var.c_str())) out += v;
      else errors.push_back(where + ": environment variable " + var + " is not set");
      pos = close + 1;
    }
    out += s.substr(pos);
    j = out;
  }
}

}  // namespace detail

inline json load_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (path.extension() == ".json") {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      fail(ErrorCode::config, path.string() + ": " + e.what());
    }
  }
  try {
    const toml::table t = toml::parse(text, path.string());
    return detail::toml_to_json(t);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ": " << e.description() << " at line " << e.source().begin.line;
    fail(ErrorCode::config, os.str());
  }
}

namespace detail {

class Checker {
 public:
  std::vector<std::string> errors;

  void error(const std::string& where, const std::string& what) { errors.push_back(where + ": " + what); }

  template <class T>
  std::optional<T> get(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) return std::nullopt;
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception&) {
      error(where + "." + key, "has the wrong type");
      return std::nullopt;
    }
  }

  void known_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!allowed.count(it.key())) error(where + "." + it.key(), "unknown key");
    }
  }
};

inline void check_choice(Checker& c, const json& obj, const std::string& key, const std::vector<std::string>& names,
                         const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_string() || std::find(names.begin(), names.end(), v.get<std::string>()) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    c.error(where + "." + key, "must be one of " + list);
  }
}

}  // namespace detail

/// Validates everything and reports all problems at once as a ConfigError.
inline ExperimentConfig parse_config(json doc) {
  detail::Checker c;
  detail::interpolate(doc, c.errors);
  ExperimentConfig cfg;
  if (!doc.is_object()) fail(ErrorCode::config, "config root must be a table");
  c.known_keys(doc, {"seed", "tasks", "backends", "prompts", "sweep", "grid_G", "n_test", "outputs", "cache",
                     "prompt_space", "active"},
               "config");

  cfg.seed = c.get<std::uint64_t>(doc, "seed", "config").value_or(0);
  cfg.grid_G = c.get<int>(doc, "grid_G", "config").value_or(50);
  if (cfg.grid_G < 2) c.error("config.grid_G", "must be at least 2");
  cfg.n_test = c.get<int>(doc, "n_test", "config").value_or(100);
  if (cfg.n_test < 0) c.error("config.n_test", "must be >= 0");
  cfg.outputs = c.get<std::string>(doc, "outputs", "config").value_or("out");
  if (doc.contains("cache") && doc.at("cache").is_boolean()) {
    if (doc.at("cache").get<bool>()) cfg.cache = cfg.outputs / "cache.jsonl";
  } else if (auto p = c.get<std::string>(doc, "cache", "config")) {
    cfg.cache = std::filesystem::path(*p);
  } else {
    cfg.cache = cfg.outputs / "cache.jsonl";
  }

  if (doc.contains("prompt_space")) {
    const json& ps = doc.at("prompt_space");
    c.known_keys(ps, {"enabled", "lo", "hi", "integer_mode"}, "prompt_space");
    cfg.prompt_space.enabled = c.get<bool>(ps, "enabled", "prompt_space").value_or(true);
    cfg.prompt_space.lo = c.get<double>(ps, "lo", "prompt_space").value_or(0.0);
    cfg.prompt_space.hi = c.get<double>(ps, "hi", "prompt_space").value_or(100.0);
    cfg.prompt_space.integer_mode = c.get<bool>(ps, "integer_mode", "prompt_space").value_or(true);
    if (!(cfg.prompt_space.hi > cfg.prompt_space.lo)) c.error("prompt_space", "hi must exceed lo");
  }

  // tasks
  if (!doc.contains("tasks") || !doc.at("tasks").is_array() || doc.at("tasks").empty()) {
    c.error("config.tasks", "at least one task is required");
  } else {
    for (std::size_t i = 0; i < doc.at("tasks").size(); ++i) {
      const json& t = doc.at("tasks")[i];
      const std::string where = "tasks[" + std::to_string(i) + "]";
      c.known_keys(t, {"name", "kind", "seeds", "num_classes", "n_points", "class_sep", "cluster_std", "factor",
                       "noise", "random_angles", "regime", "sampled"},
                   where);
      detail::check_choice(c, t, "kind", {"linear", "circle", "moon"}, where);
      detail::check_choice(c, t, "regime", {"train", "test"}, where);
      if (!t.contains("kind")) c.error(where + ".kind", "is required");
      TaskEntry e;
      try {
        e.spec = t.get<TaskSpec>();
      } catch (const json::exception&) {
        c.error(where, "has a field of the wrong type");
      }
      e.sampled = c.get<bool>(t, "sampled", where).value_or(false);
      e.seeds = c.get<std::vector<std::uint64_t>>(t, "seeds", where).value_or(std::vector<std::uint64_t>{});
      if (e.seeds.empty()) c.error(where + ".seeds", "seed list must be non-empty");
      e.name = c.get<std::string>(t, "name", where).value_or(t.value("kind", std::string("task")) + std::to_string(i));
      if (e.spec.num_classes < 2) c.error(where + ".num_classes", "must be at least 2");
      if (e.spec.kind != TaskKind::linear && e.spec.num_classes != 2) c.error(where, "circle and moon tasks are binary");
      if (e.spec.kind == TaskKind::linear && e.spec.num_classes > 4) c.error(where, "linear tasks support K <= 4");
      if (e.spec.num_classes >= 2 && e.spec.n_points % e.spec.num_classes != 0) {
        c.error(where + ".n_points", "must be divisible by num_classes");
      }
      cfg.tasks.push_back(std::move(e));
    }
  }

  // backends
  if (!doc.contains("backends") || !doc.at("backends").is_array() || doc.at("backends").empty()) {
    c.error("config.backends", "at least one backend is required");
  } else {
    std::set<std::string> names;
    for (std::size_t i = 0; i < doc.at("backends").size(); ++i) {
      const json& b = doc.at("backends")[i];
      const std::string where = "backends[" + std::to_string(i) + "]";
      BackendEntry e;
      e.name = c.get<std::string>(b, "name", where).value_or("");
      e.type = c.get<std::string>(b, "type", where).value_or("");
      if (e.name.empty()) c.error(where + ".name", "is required");
      else if (!names.insert(e.name).second) c.error(where + ".name", "duplicate backend name '" + e.name + "'");
      detail::check_choice(c, b, "type", {"mock", "completion", "numeric", "baseline"}, where);
      detail::check_choice(c, b, "mode", {"logprob", "generation"}, where);
      e.params = b;
      if (e.type == "mock") {
        detail::check_choice(c, b, "script", {"threshold", "constant", "soft_threshold", "nearest_centroid"}, where);
      } else if (e.type == "completion") {
        if (!b.contains("endpoint")) c.error(where + ".endpoint", "is required");
        if (!b.contains("model")) c.error(where + ".model", "is required");
        if (b.value("temperature", 0.0) != 0.0) c.error(where + ".temperature", "probing requires temperature 0");
      } else if (e.type == "numeric") {
        if (!b.contains("endpoint")) c.error(where + ".endpoint", "is required");
      } else if (e.type == "baseline") {
        const auto model = c.get<std::string>(b, "model", where);
        if (!model) c.error(where + ".model", "is required");
        else {
          try {
            baselines::classifier_from_name(*model);
          } catch (const Error& err) {
            c.error(where + ".model", err.what());
          }
        }
      }
      cfg.backends.push_back(std::move(e));
    }
  }

  // prompt variants
  json prompts = doc.value("prompts", json::array());
  if (prompts.empty()) prompts.push_back(json::object());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const json& p = prompts[i];
    const std::string where = "prompts[" + std::to_string(i) + "]";
    c.known_keys(p, {"name", "labels", "instruction_template", "query_preamble", "trailing_space", "ordering_seeds"},
                 where);
    PromptConfig pc;
    try {
      pc = p.get<PromptConfig>();
    } catch (const json::exception&) {
      c.error(where, "has a field of the wrong type");
    }
    pc.integer_mode = cfg.prompt_space.integer_mode;
    try {
      make_label_map(pc);
    } catch (const Error& err) {
      c.error(where + ".labels", err.what());
    }
    std::vector<std::optional<std::uint64_t>> orders{std::nullopt};
    if (p.contains("ordering_seeds")) {
      orders.clear();
      const auto seeds = c.get<std::vector<std::uint64_t>>(p, "ordering_seeds", where);
      if (seeds && seeds->empty()) c.error(where + ".ordering_seeds", "must be non-empty when given");
      if (seeds) orders.assign(seeds->begin(), seeds->end());
    }
    std::string base = c.get<std::string>(p, "name", where).value_or("p" + std::to_string(i));
    for (const auto& o : orders) {
      PromptVariant v;
      v.prompt = pc;
      v.prompt.ordering_seed = o;
      v.name = o ? base + "-o" + std::to_string(*o) : base;
      cfg.prompts.push_back(std::move(v));
    }
  }

  // sweep
  if (doc.contains("sweep")) {
    c.known_keys(doc.at("sweep"), {"n_context"}, "sweep");
    cfg.n_context = c.get<std::vector<int>>(doc.at("sweep"), "n_context", "sweep").value_or(std::vector<int>{});
  }
  if (cfg.n_context.empty()) c.error("sweep.n_context", "at least one context size is required");
  for (int n : cfg.n_context) {
    if (n < 1) c.error("sweep.n_context", "sizes must be positive");
  }
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const auto& t = cfg.tasks[i].spec;
    if (t.num_classes < 2) continue;
    const std::string where = "tasks[" + std::to_string(i) + "]";
    int n_max = 0;
    for (int n : cfg.n_context) {
      n_max = std::max(n_max, n);
      if (n % t.num_classes != 0) c.error(where, "n_context " + std::to_string(n) + " not divisible by num_classes");
    }
    if (cfg.n_test % t.num_classes != 0) c.error(where, "n_test not divisible by num_classes");
    if (n_max + cfg.n_test > t.n_points) {
      c.error(where, "n_points " + std::to_string(t.n_points) + " too small for n_context " + std::to_string(n_max) +
                         " plus n_test " + std::to_string(cfg.n_test));
    }
  }

  if (doc.contains("active")) {
    const json& a = doc.at("active");
    c.known_keys(a, {"schedule", "min_separation", "oracle_train_size", "policy", "seed", "shuffle_each_step",
                     "grid_G"},
                 "active");
    detail::check_choice(c, a, "policy", {"active", "random"}, "active");
    try {
      ActiveConfig ac = a.get<ActiveConfig>();
      if (!a.contains("grid_G")) ac.grid_G = cfg.grid_G;
      if (!a.contains("seed")) ac.seed = cfg.seed;
      ac.validate();
      cfg.active = ac;
    } catch (const Error& err) {
      c.error("active", err.what());
    } catch (const json::exception&) {
      c.error("active", "has a field of the wrong type");
    }
  }

  if (!c.errors.empty()) {
    std::string msg = std::to_string(c.errors.size()) + " configuration error(s):";
    for (const auto& e : c.errors) msg += "\n  " + e;
    fail(ErrorCode::config, msg);
  }
  cfg.source = std::move(doc);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(load_document(path)); }

inline ProbeMode mode_of(const json& p) {
  return p.value("mode", std::string("logprob")) == "generation" ? ProbeMode::generation : ProbeMode::logprob;
}

/// Instantiates the backend described by `e`; `seed` feeds stochastic baselines.
inline BackendPtr build_backend(const BackendEntry& e, std::uint64_t seed) {
  const json& p = e.params;
  if (e.type == "mock") {
    const std::string script = p.value("script", std::string("threshold"));
    MockScorer scorer;
    json desc = {{"script", script}};
    if (script == "threshold") {
      const double t = p.value("threshold", 50.0);
      scorer = mock_scripts::threshold(t);
      desc["threshold"] = t;
    } else if (script == "constant") {
      const int cls = p.value("class", 0);
      scorer = mock_scripts::constant(cls);
      desc["class"] = cls;
    } else if (script == "soft_threshold") {
      const double t = p.value("threshold", 50.0);
      const double w = p.value("width", 5.0);
      scorer = mock_scripts::soft_threshold(t, w);
      desc["threshold"] = t;
      desc["width"] = w;
    } else {
      const double bw = p.value("bandwidth", 10.0);
      scorer = mock_scripts::nearest_centroid(bw);
      desc["bandwidth"] = bw;
    }
    MockBackend::Options o;
    o.name = e.name + "|" + desc.dump();
    o.mode = mode_of(p);
    o.max_in_flight = p.value("max_in_flight", std::size_t{8});
    return std::make_shared<MockBackend>(std::move(scorer), std::move(o));
  }
  if (e.type == "completion") {
    CompletionBackend::Options o;
    o.endpoint = p.at("endpoint").get<std::string>();
    o.model = p.at("model").get<std::string>();
    o.mode = mode_of(p);
    o.decode.max_tokens = p.value("max_tokens", o.decode.max_tokens);
    o.decode.top_logprobs = p.value("top_logprobs", o.decode.top_logprobs);
    o.max_in_flight = p.value("max_in_flight", o.max_in_flight);
    o.retry.max_attempts = p.value("retries", o.retry.max_attempts);
    o.retry.backoff_seconds = p.value("backoff_seconds", o.retry.backoff_seconds);
    o.api_key_env = p.value("api_key_env", o.api_key_env);
    return std::make_shared<CompletionBackend>(std::move(o));
  }
  if (e.type == "numeric") {
    NumericBackend::Options o;
    o.endpoint = p.at("endpoint").get<std::string>();
    o.model_name = p.value("model_name", e.name);
    o.chunk_size = p.value("chunk_size", o.chunk_size);
    o.retry.max_attempts = p.value("retries", o.retry.max_attempts);
    o.retry.backoff_seconds = p.value("backoff_seconds", o.retry.backoff_seconds);
    return std::make_shared<NumericBackend>(std::move(o));
  }
  if (e.type == "baseline") {
    baselines::ClassifierSpec spec = baselines::classifier_from_name(p.at("model").get<std::string>());
    if (p.contains("params")) spec.params.update(p.at("params"));
    return std::make_shared<BaselineBackend>(std::move(spec), p.value("seed", seed), e.name);
  }
  fail(ErrorCode::config, "unknown backend type '" + e.type + "'");
}

}  // namespace iclb::experiment
