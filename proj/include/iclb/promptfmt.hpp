#pragma once

// Text serialization of context examples and a query, label vocabularies and
// the class <-> label-token correspondence used to read backend responses.

#include <nlohmann/json.hpp>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclb/error.hpp"
#include "iclb/hash.hpp"
#include "iclb/rng.hpp"
#include "iclb/types.hpp"

namespace iclb {

inline constexpr std::string_view kDefaultInstruction =
    "Given pairs of numbers and their labels, predict the label for a new input pair of numbers "
    "based on the provided data.\nAnswer with only one of the labels {labels}:";
inline constexpr std::string_view kDefaultQueryPreamble = "What is the label for this input?";

struct PromptConfig {
  std::vector<std::string> labels{"Foo", "Bar"};
  std::string instruction_template{kDefaultInstruction};
  std::optional<std::uint64_t> ordering_seed;
  bool integer_mode = true;
  std::string query_preamble{kDefaultQueryPreamble};
  bool trailing_space = false;
};

inline void to_json(nlohmann::json& j, const PromptConfig& c) {
  j = nlohmann::json{{"labels", c.labels},
                     {"instruction_template", c.instruction_template},
                     {"integer_mode", c.integer_mode},
                     {"query_preamble", c.query_preamble},
                     {"trailing_space", c.trailing_space}};
  j["ordering_seed"] = c.ordering_seed ? nlohmann::json(*c.ordering_seed) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, PromptConfig& c) {
  PromptConfig d;
  c.labels = j.value("labels", d.labels);
  c.instruction_template = j.value("instruction_template", d.instruction_template);
  c.integer_mode = j.value("integer_mode", d.integer_mode);
  c.query_preamble = j.value("query_preamble", d.query_preamble);
  c.trailing_space = j.value("trailing_space", d.trailing_space);
  c.ordering_seed.reset();
  if (j.contains("ordering_seed") && !j.at("ordering_seed").is_null()) {
    c.ordering_seed = j.at("ordering_seed").get<std::uint64_t>();
  }
}

inline std::string prompt_fingerprint(const PromptConfig& c) {
  return sha256_hex(nlohmann::json(c).dump());
}

namespace text {

inline std::string casefold(std::string_view s) {
  std::string out(s);
  for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string_view first_word(std::string_view s) {
  s = trim(s);
  std::size_t end = 0;
  while (end < s.size() && !std::isspace(static_cast<unsigned char>(s[end]))) ++end;
  return s.substr(0, end);
}

}  // namespace text

/// Class index <-> label string. Backend tokens are matched against the
/// case-folded first word of each label.
class LabelMap {
 public:
  LabelMap() = default;

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& keys() const { return keys_; }
  int size() const { return static_cast<int>(keys_.size()); }

  /// Classes whose key starts with (or equals) the token after stripping
  /// leading whitespace and case-folding. Empty tokens match nothing.
  std::vector<int> classes_for_token(std::string_view token) const {
    while (!token.empty() && std::isspace(static_cast<unsigned char>(token.front()))) token.remove_prefix(1);
    std::vector<int> out;
    if (token.empty()) return out;
    const std::string t = text::casefold(token);
    for (int i = 0; i < size(); ++i) {
      if (keys_[i].compare(0, t.size(), t) == 0) out.push_back(i);
    }
    return out;
  }

  /// Exact key match of a whole word (generation mode).
  std::optional<int> class_for_word(std::string_view word) const {
    const std::string w = text::casefold(word);
    for (int i = 0; i < size(); ++i) {
      if (keys_[i] == w) return i;
    }
    return std::nullopt;
  }

  friend LabelMap make_label_map(const PromptConfig& cfg);

 private:
  std::vector<std::string> labels_;
  std::vector<std::string> keys_;
};

inline LabelMap make_label_map(const PromptConfig& cfg) {
  require(cfg.labels.size() >= 2, ErrorCode::label, "need at least two labels");
  LabelMap m;
  std::vector<std::string> folded;
  for (const auto& l : cfg.labels) {
    const std::string_view word = text::first_word(l);
    require(!word.empty(), ErrorCode::label, "label '" + l + "' is blank");
    const std::string f = text::casefold(text::trim(l));
    const std::string key = text::casefold(word);
    for (std::size_t i = 0; i < m.keys_.size(); ++i) {
      require(m.keys_[i] != key && folded[i] != f, ErrorCode::ambiguous_labels,
              "labels '" + m.labels_[i] + "' and '" + l + "' collide after case-folding");
    }
    m.labels_.push_back(l);
    m.keys_.push_back(key);
    folded.push_back(f);
  }
  return m;
}

inline std::string render_number(double v, bool integer_mode) {
  char buf[64];
  if (integer_mode) {
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(std::llround(v)));
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", v);
    if (std::string_view(buf) == "-0.00") return "0.00";
  }
  return buf;
}

/// "'A' and 'B'" / "'A', 'B' and 'C'".
inline std::string enumerate_labels(const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += (i + 1 == labels.size()) ? " and " : ", ";
    out += "'" + labels[i] + "'";
  }
  return out;
}

inline std::string render_instruction(const PromptConfig& cfg) {
  std::string out = cfg.instruction_template;
  const std::string placeholder = "{labels}";
  const std::string list = enumerate_labels(cfg.labels);
  for (std::size_t pos = out.find(placeholder); pos != std::string::npos;
       pos = out.find(placeholder, pos + list.size())) {
    out.replace(pos, placeholder.size(), list);
  }
  return out;
}

/// Layout: instruction, blank line, one "Input/Label" pair per example, blank
/// line, query block ending in "Label:".
inline std::string render_prompt(std::span<const LabeledPoint> context, const Point& query,
                                 const PromptConfig& cfg) {
  const int k = static_cast<int>(cfg.labels.size());
  std::string out = render_instruction(cfg);
  out += "\n\n";
  for (const auto& ex : context) {
    require(ex.label >= 0 && ex.label < k, ErrorCode::label,
            "context label " + std::to_string(ex.label) + " out of range for K=" + std::to_string(k));
    out += "Input: ";
    out += render_number(ex.prompt[0], cfg.integer_mode);
    out += ' ';
    out += render_number(ex.prompt[1], cfg.integer_mode);
    out += "\nLabel: ";
    out += cfg.labels[static_cast<std::size_t>(ex.label)];
    out += '\n';
  }
  out += '\n';
  out += cfg.query_preamble;
  out += "\nInput: ";
  out += render_number(query[0], cfg.integer_mode);
  out += ' ';
  out += render_number(query[1], cfg.integer_mode);
  out += "\nLabel:";
  if (cfg.trailing_space) out += ' ';
  return out;
}

/// Fisher-Yates under the "shuffle" substream of `seed`.
template <typename T>
std::vector<T> permute_context(std::vector<T> context, std::uint64_t seed) {
  Rng rng = substream(seed, "shuffle");
  fisher_yates(context, rng);
  return context;
}

struct ParsedPrompt {
  std::vector<std::pair<Point, int>> context;
  Point query{};
};

/// Inverse of render_prompt for a known config. Numbers come back as rendered
/// (integers or 2-decimal values).
inline ParsedPrompt parse_prompt(std::string_view prompt, const PromptConfig& cfg) {
  auto bad = [](const std::string& why) { fail(ErrorCode::prompt_parse, why); };
  const std::string head = render_instruction(cfg) + "\n\n";
  if (prompt.substr(0, head.size()) != head) bad("instruction block mismatch");
  std::string_view rest = prompt.substr(head.size());

  auto take_line = [&](std::string_view& s) -> std::string_view {
    const std::size_t nl = s.find('\n');
    if (nl == std::string_view::npos) bad("unterminated line");
    std::string_view line = s.substr(0, nl);
    s.remove_prefix(nl + 1);
    return line;
  };
  auto parse_pair = [&](std::string_view line) -> Point {
    constexpr std::string_view tag = "Input: ";
    if (line.substr(0, tag.size()) != tag) bad("expected 'Input: '");
    line.remove_prefix(tag.size());
    const std::size_t sp = line.find(' ');
    if (sp == std::string_view::npos) bad("expected two numbers");
    const std::string a(line.substr(0, sp));
    const std::string b(line.substr(sp + 1));
    char* end = nullptr;
    const double x0 = std::strtod(a.c_str(), &end);
    if (a.empty() || *end != '\0') bad("bad number '" + a + "'");
    const double x1 = std::strtod(b.c_str(), &end);
    if (b.empty() || *end != '\0') bad("bad number '" + b + "'");
    return {x0, x1};
  };

  ParsedPrompt out;
  while (!rest.empty() && rest.front() != '\n') {
    const Point x = parse_pair(take_line(rest));
    std::string_view lab = take_line(rest);
    constexpr std::string_view tag = "Label: ";
    if (lab.substr(0, tag.size()) != tag) bad("expected 'Label: '");
    lab.remove_prefix(tag.size());
    int cls = -1;
    for (std::size_t i = 0; i < cfg.labels.size(); ++i) {
      if (cfg.labels[i] == lab) cls = static_cast<int>(i);
    }
    if (cls < 0) bad("unknown label '" + std::string(lab) + "'");
    out.context.emplace_back(x, cls);
  }
  if (rest.empty()) bad("missing query block");
  rest.remove_prefix(1);
  if (take_line(rest) != cfg.query_preamble) bad("query preamble mismatch");
  out.query = parse_pair(take_line(rest));
  const std::string tail = cfg.trailing_space ? "Label: " : "Label:";
  if (rest != tail) bad("prompt must end with '" + tail + "'");
  return out;
}

}  // namespace iclb
