#pragma once

// Deterministic SVG output: decision maps and accuracy-vs-context curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iclb/metrics.hpp"
#include "iclb/probe.hpp"

namespace iclb::experiment {

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p{"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                          "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
  return p;
}

inline std::string class_color(int c) { return palette()[static_cast<std::size_t>(c) % palette().size()]; }

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Fixed two-decimal formatting keeps the output byte-stable.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  return s == "-0.00" ? "0.00" : s;
}

struct MapStyle {
  int cell_px = 8;
  std::vector<LabeledPoint> context;  // raw coordinates, overlaid as markers
  std::optional<double> accuracy;
  std::string title;
};

/// Cells coloured by class with row 0 at the bottom, abstains hatched,
/// context points on top and a legend of label strings.
inline std::string render_map(const DecisionMap& m, const MapStyle& style = {}) {
  const int g = m.grid.G;
  const int cell = style.cell_px;
  const int left = 10;
  const int top = 30;
  const int plot = g * cell;
  const int legend_h = 20 * (static_cast<int>(m.label_names.size()) + 1);
  const int width = plot + 2 * left;
  const int height = top + plot + 10 + legend_h;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
       std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " + std::to_string(height) + "\">\n";
  s += "<defs><pattern id=\"hatch\" width=\"4\" height=\"4\" patternUnits=\"userSpaceOnUse\">"
       "<rect width=\"4\" height=\"4\" fill=\"#ffffff\"/><path d=\"M0,4 L4,0\" stroke=\"#000000\" stroke-width=\"1\"/>"
       "</pattern></defs>\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  std::string title = style.title;
  if (style.accuracy) title += (title.empty() ? "" : "  ") + std::string("acc=") + num(*style.accuracy);
  s += "<text x=\"" + std::to_string(width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"14\">" + xml_escape(title) + "</text>\n";

  s += "<g id=\"cells\" shape-rendering=\"crispEdges\">\n";
  for (int j = 0; j < g; ++j) {
    for (int i = 0; i < g; ++i) {
      const int label = m.labels[m.grid.index(i, j)];
      const int x = left + i * cell;
      const int y = top + (g - 1 - j) * cell;
      const std::string fill = label == kAbstain ? "url(#hatch)" : class_color(label);
      s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" + std::to_string(cell) +
           "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill + "\"/>\n";
    }
  }
  s += "</g>\n";

  s += "<g id=\"context\">\n";
  const double span0 = m.grid.x_max[0] - m.grid.x_min[0];
  const double span1 = m.grid.x_max[1] - m.grid.x_min[1];
  for (const auto& p : style.context) {
    const double u = (p.raw[0] - m.grid.x_min[0]) / span0;
    const double v = (p.raw[1] - m.grid.x_min[1]) / span1;
    const double cx = left + cell / 2.0 + u * (g - 1) * cell;
    const double cy = top + cell / 2.0 + (1.0 - v) * (g - 1) * cell;
    s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(std::max(2.0, cell * 0.45)) +
         "\" fill=\"" + class_color(p.label) + "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  }
  s += "</g>\n";

  s += "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  int ly = top + plot + 10;
  for (std::size_t c = 0; c < m.label_names.size(); ++c) {
    s += "<rect x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(ly) + "\" width=\"12\" height=\"12\" fill=\"" +
         class_color(static_cast<int>(c)) + "\"/><text x=\"" + std::to_string(left + 18) + "\" y=\"" +
         std::to_string(ly + 11) + "\">" + xml_escape(m.label_names[c]) + "</text>\n";
    ly += 20;
  }
  s += "<rect x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(ly) +
       "\" width=\"12\" height=\"12\" fill=\"url(#hatch)\" stroke=\"#000000\"/><text x=\"" + std::to_string(left + 18) +
       "\" y=\"" + std::to_string(ly + 11) + "\">abstain</text>\n";
  s += "</g>\n</svg>\n";
  return s;
}

struct CurveFigure {
  std::string svg;
  std::map<std::string, std::string> csv;  // per series
};

/// One line per series on a log2 context-size axis, with a shaded +-SE band
/// wherever the standard error is defined.
inline CurveFigure render_curves(const std::map<std::string, std::vector<CurvePoint>>& series,
                                 const std::string& title = "test accuracy") {
  const int left = 50, right = 150, top = 30, bottom = 40;
  const int pw = 400, ph = 260;
  const int width = left + pw + right;
  const int height = top + ph + bottom;

  int n_lo = 0, n_hi = 0;
  for (const auto& [name, pts] : series) {
    for (const auto& p : pts) {
      n_lo = n_lo == 0 ? p.n_context : std::min(n_lo, p.n_context);
      n_hi = std::max(n_hi, p.n_context);
    }
  }
  const double lx0 = std::log2(std::max(1, n_lo));
  const double lx1 = std::max(lx0 + 1.0, std::log2(std::max(1, n_hi)));
  auto px = [&](int n) { return left + (std::log2(static_cast<double>(n)) - lx0) / (lx1 - lx0) * pw; };
  auto py = [&](double acc) { return top + (1.0 - std::clamp(acc, 0.0, 1.0)) * ph; };

  CurveFigure fig;
  std::string& s = fig.svg;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
       std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " + std::to_string(height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  s += "<text x=\"" + std::to_string(left + pw / 2) + "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"14\">" + xml_escape(title) + "</text>\n";
  s += "<g id=\"axes\" stroke=\"#000000\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top + ph) + "\" x2=\"" +
       std::to_string(left + pw) + "\" y2=\"" + std::to_string(top + ph) + "\"/>\n";
  s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top) + "\" x2=\"" + std::to_string(left) +
       "\" y2=\"" + std::to_string(top + ph) + "\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double acc = k / 4.0;
    s += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + num(py(acc) + 4) + "\" text-anchor=\"end\" stroke=\"none\">" +
         num(acc) + "</text>\n";
  }
  std::vector<int> ticks;
  for (const auto& [name, pts] : series) {
    for (const auto& p : pts) {
      if (std::find(ticks.begin(), ticks.end(), p.n_context) == ticks.end()) ticks.push_back(p.n_context);
    }
  }
  std::sort(ticks.begin(), ticks.end());
  for (int n : ticks) {
    s += "<text x=\"" + num(px(n)) + "\" y=\"" + std::to_string(top + ph + 16) +
         "\" text-anchor=\"middle\" stroke=\"none\">" + std::to_string(n) + "</text>\n";
  }
  s += "<text x=\"" + std::to_string(left + pw / 2) + "\" y=\"" + std::to_string(height - 6) +
       "\" text-anchor=\"middle\" stroke=\"none\">in-context examples</text>\n";
  s += "</g>\n";

  int idx = 0;
  for (const auto& [name, pts] : series) {
    const std::string color = class_color(idx);
    bool has_band = !pts.empty();
    for (const auto& p : pts) has_band = has_band && p.standard_error.has_value();
    s += "<g class=\"series\" id=\"series-" + std::to_string(idx) + "\">\n";
    if (has_band) {
      std::string poly;
      for (const auto& p : pts) poly += num(px(p.n_context)) + "," + num(py(p.mean_accuracy + *p.standard_error)) + " ";
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        poly += num(px(it->n_context)) + "," + num(py(it->mean_accuracy - *it->standard_error)) + " ";
      }
      poly.pop_back();
      s += "<polygon class=\"band\" points=\"" + poly + "\" fill=\"" + color + "\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
    }
    std::string line;
    for (const auto& p : pts) line += num(px(p.n_context)) + "," + num(py(p.mean_accuracy)) + " ";
    if (!line.empty()) line.pop_back();
    s += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    for (const auto& p : pts) {
      s += "<circle cx=\"" + num(px(p.n_context)) + "\" cy=\"" + num(py(p.mean_accuracy)) + "\" r=\"3\" fill=\"" +
           color + "\"/>\n";
    }
    const int ly = top + 10 + idx * 18;
    s += "<rect x=\"" + std::to_string(left + pw + 15) + "\" y=\"" + std::to_string(ly) +
         "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/><text x=\"" + std::to_string(left + pw + 32) + "\" y=\"" +
         std::to_string(ly + 11) + "\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(name) + "</text>\n";
    s += "</g>\n";
    fig.csv[name] = curve_csv(pts);
    ++idx;
  }
  s += "</svg>\n";
  return fig;
}

}  // namespace iclb::experiment
