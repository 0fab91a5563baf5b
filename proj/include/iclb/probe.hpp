#pragma once

// Uniform G x G query grid over the context's bounding box, driven through a
// backend into decision / probability / entropy maps.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "iclb/backend.hpp"
#include "iclb/error.hpp"
#include "iclb/types.hpp"

namespace iclb {

inline constexpr int kAbstain = -1;

struct GridSpec {
  Point x_min{};
  Point x_max{};
  int G = 50;
  Point dx{};
  std::vector<std::string> warnings;

  std::size_t size() const { return static_cast<std::size_t>(G) * static_cast<std::size_t>(G); }

  /// i runs along dimension 0 (columns), j along dimension 1 (rows).
  Point at(int i, int j) const { return {x_min[0] + i * dx[0], x_min[1] + j * dx[1]}; }

  /// Row-major cell index.
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * static_cast<std::size_t>(G) + static_cast<std::size_t>(i); }
  int col(std::size_t cell) const { return static_cast<int>(cell % static_cast<std::size_t>(G)); }
  int row(std::size_t cell) const { return static_cast<int>(cell / static_cast<std::size_t>(G)); }
  Point at(std::size_t cell) const { return at(col(cell), row(cell)); }

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.x_min == b.x_min && a.x_max == b.x_max && a.G == b.G && a.dx == b.dx;
  }
};

inline GridSpec make_grid(Point x_min, Point x_max, int G) {
  require(G >= 2, ErrorCode::param, "grid needs G >= 2");
  GridSpec g;
  g.G = G;
  g.x_min = x_min;
  g.x_max = x_max;
  for (int d = 0; d < 2; ++d) {
    require(x_max[d] > x_min[d], ErrorCode::param, "grid bounds must satisfy x_max > x_min");
    g.dx[d] = (x_max[d] - x_min[d]) / (G - 1);
  }
  return g;
}

/// Bounds are the exact per-dimension extrema of the context (raw space). A
/// dimension with a single value is widened by 0.5 on each side.
inline GridSpec build_grid(std::span<const LabeledPoint> context, int G) {
  require(!context.empty(), ErrorCode::size, "cannot build a grid from an empty context");
  Point lo = context.front().raw;
  Point hi = lo;
  for (const auto& p : context) {
    for (int d = 0; d < 2; ++d) {
      lo[d] = std::min(lo[d], p.raw[d]);
      hi[d] = std::max(hi[d], p.raw[d]);
    }
  }
  std::vector<std::string> warnings;
  for (int d = 0; d < 2; ++d) {
    if (!(hi[d] > lo[d])) {
      lo[d] -= 0.5;
      hi[d] += 0.5;
      warnings.push_back("degenerate bounds in dimension " + std::to_string(d) + " widened by +/-0.5");
    }
  }
  GridSpec g = make_grid(lo, hi, G);
  g.warnings = std::move(warnings);
  return g;
}

/// -sum p ln p with 0 ln 0 = 0.
inline double entropy_of(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) {
    require(std::isfinite(p) && p >= -1e-6, ErrorCode::domain, "probability outside [0,1]");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-6, ErrorCode::domain, "probabilities do not sum to 1");
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

struct DecisionMap {
  GridSpec grid;
  int num_classes = 2;
  std::vector<std::string> label_names;
  std::vector<int> labels;                     // G*G, kAbstain where no class was read
  std::optional<std::vector<double>> probs;    // G*G*K, row-major cells
  std::optional<std::vector<double>> entropy;  // G*G
  std::string context_fingerprint;
  std::string backend_fingerprint;
  std::vector<std::string> cell_errors;  // one per abstain cell, in cell order

  std::size_t abstain_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kAbstain));
  }
  double abstain_fraction() const {
    return labels.empty() ? 0.0 : static_cast<double>(abstain_count()) / static_cast<double>(labels.size());
  }
  std::span<const double> cell_probs(std::size_t cell) const {
    return std::span<const double>(*probs).subspan(cell * static_cast<std::size_t>(num_classes),
                                                   static_cast<std::size_t>(num_classes));
  }
};

class ProbeDegraded : public Error {
 public:
  ProbeDegraded(DecisionMap partial, const std::string& what)
      : Error(ErrorCode::probe_degraded, what), partial_(std::move(partial)) {}
  const DecisionMap& partial() const { return partial_; }

 private:
  DecisionMap partial_;
};

/// Fraction of abstaining cells above which probe_map throws ProbeDegraded.
inline constexpr double kMaxAbstainFraction = 0.10;

inline std::vector<QueryPoint> grid_queries(const GridSpec& grid, const ProbeContext& ctx) {
  std::vector<QueryPoint> qs;
  qs.reserve(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) qs.push_back(ctx.query_at(grid.at(c)));
  return qs;
}

/// Assembles a map from per-cell outcomes. Probabilities are kept whenever
/// every answered cell has them; entropy only when all are genuine.
inline DecisionMap assemble_map(const GridSpec& grid, const ProbeContext& ctx, const Backend& backend,
                                const std::vector<CellOutcome>& cells) {
  DecisionMap m;
  m.grid = grid;
  m.num_classes = ctx.num_classes;
  m.label_names = ctx.prompt.labels;
  m.context_fingerprint = ctx.fingerprint();
  m.backend_fingerprint = backend.fingerprint();
  m.labels.assign(grid.size(), kAbstain);
  const auto k = static_cast<std::size_t>(ctx.num_classes);
  std::vector<double> probs(grid.size() * k, 0.0);
  std::vector<double> ent(grid.size(), 0.0);
  bool genuine = true;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!cells[c].ok()) {
      m.cell_errors.push_back(cells[c].message);
      continue;
    }
    const auto& p = *cells[c].prediction;
    m.labels[c] = p.cls;
    std::copy(p.probs.begin(), p.probs.end(), probs.begin() + static_cast<std::ptrdiff_t>(c * k));
    genuine = genuine && p.genuine_probs();
    ent[c] = entropy_of(p.probs);
  }
  m.probs = std::move(probs);
  if (genuine) m.entropy = std::move(ent);
  return m;
}

/// Sends one query for the first grid cell so an unreachable endpoint fails
/// fast with BackendUnavailable instead of degrading a whole map.
inline void preflight(const Backend& backend, const ProbeContext& ctx, const GridSpec& grid) {
  const QueryPoint first = ctx.query_at(grid.at(std::size_t{0}));
  const auto probe = classify_batch(backend, ctx, std::span<const QueryPoint>(&first, 1));
  if (!probe[0].ok() && probe[0].error == ErrorCode::backend_unavailable) {
    fail(ErrorCode::backend_unavailable, probe[0].message);
  }
}

inline DecisionMap probe_map(const Backend& backend, const ProbeContext& ctx, const GridSpec& grid) {
  const auto queries = grid_queries(grid, ctx);
  const auto cells = classify_batch(backend, ctx, queries);
  DecisionMap m = assemble_map(grid, ctx, backend, cells);
  if (m.abstain_fraction() > kMaxAbstainFraction) {
    const std::string why = std::to_string(m.abstain_count()) + " of " + std::to_string(grid.size()) +
                            " cells abstained" + (m.cell_errors.empty() ? "" : "; first: " + m.cell_errors.front());
    throw ProbeDegraded(std::move(m), why);
  }
  return m;
}

namespace map_io {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json header(const DecisionMap& m) {
  return nlohmann::json{{"grid", {{"x_min", m.grid.x_min}, {"x_max", m.grid.x_max}, {"G", m.grid.G}, {"dx", m.grid.dx}}},
                        {"num_classes", m.num_classes},
                        {"labels", m.label_names},
                        {"context_fingerprint", m.context_fingerprint},
                        {"backend_fingerprint", m.backend_fingerprint},
                        {"has_probs", m.probs.has_value()},
                        {"has_entropy", m.entropy.has_value()}};
}

/// One JSON header line, then CSV `i,j,x0,x1,label,p0..p{K-1},entropy`.
/// Unavailable fields are empty.
inline void write(std::ostream& os, const DecisionMap& m) {
  os << header(m).dump() << '\n';
  os << "i,j,x0,x1,label";
  for (int c = 0; c < m.num_classes; ++c) os << ",p" << c;
  os << ",entropy\n";
  for (std::size_t cell = 0; cell < m.labels.size(); ++cell) {
    const int i = m.grid.col(cell);
    const int j = m.grid.row(cell);
    const Point x = m.grid.at(i, j);
    const bool abstain = m.labels[cell] == kAbstain;
    os << i << ',' << j << ',' << fmt_double(x[0]) << ',' << fmt_double(x[1]) << ',';
    if (!abstain) os << m.labels[cell];
    for (int c = 0; c < m.num_classes; ++c) {
      os << ',';
      if (m.probs && !abstain) os << fmt_double((*m.probs)[cell * static_cast<std::size_t>(m.num_classes) + static_cast<std::size_t>(c)]);
    }
    os << ',';
    if (m.entropy && !abstain) os << fmt_double((*m.entropy)[cell]);
    os << '\n';
  }
}

inline std::string to_string(const DecisionMap& m) {
  std::ostringstream os;
  write(os, m);
  return os.str();
}

inline DecisionMap read(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), ErrorCode::io, "map file is empty");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("bad map header: ") + e.what());
  }
  DecisionMap m;
  m.grid.x_min = h.at("grid").at("x_min").get<Point>();
  m.grid.x_max = h.at("grid").at("x_max").get<Point>();
  m.grid.G = h.at("grid").at("G").get<int>();
  m.grid.dx = h.at("grid").at("dx").get<Point>();
  m.num_classes = h.at("num_classes").get<int>();
  m.label_names = h.at("labels").get<std::vector<std::string>>();
  m.context_fingerprint = h.at("context_fingerprint").get<std::string>();
  m.backend_fingerprint = h.at("backend_fingerprint").get<std::string>();
  const bool has_probs = h.value("has_probs", false);
  const bool has_entropy = h.value("has_entropy", false);
  const auto k = static_cast<std::size_t>(m.num_classes);
  m.labels.assign(m.grid.size(), kAbstain);
  std::vector<double> probs(m.grid.size() * k, 0.0);
  std::vector<double> ent(m.grid.size(), 0.0);
  std::getline(is, line);  // column header
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    require(f.size() == 6 + k, ErrorCode::io, "map row has the wrong number of fields");
    const std::size_t cell = m.grid.index(std::stoi(f[0]), std::stoi(f[1]));
    require(cell < m.grid.size(), ErrorCode::io, "map row index out of range");
    if (!f[4].empty()) m.labels[cell] = std::stoi(f[4]);
    for (std::size_t c = 0; c < k; ++c) {
      if (!f[5 + c].empty()) probs[cell * k + c] = std::stod(f[5 + c]);
    }
    if (!f[5 + k].empty()) ent[cell] = std::stod(f[5 + k]);
    ++rows;
  }
  require(rows == m.grid.size(), ErrorCode::io, "map file has " + std::to_string(rows) + " rows, expected G*G");
  if (has_probs) m.probs = std::move(probs);
  if (has_entropy) m.entropy = std::move(ent);
  return m;
}

}  // namespace map_io

}  // namespace iclb
