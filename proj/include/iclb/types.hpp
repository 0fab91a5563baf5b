#pragma once

#include <array>
#include <cmath>

namespace iclb {

using Point = std::array<double, 2>;

/// A labeled example in both coordinate frames: `raw` is the generator's
/// space (baselines and numeric backends), `prompt` is what text backends see.
struct LabeledPoint {
  Point raw{};
  Point prompt{};
  int label = 0;

  friend bool operator==(const LabeledPoint&, const LabeledPoint&) = default;
};

struct QueryPoint {
  Point raw{};
  Point prompt{};
};

inline bool is_finite(const Point& p) { return std::isfinite(p[0]) && std::isfinite(p[1]); }

}  // namespace iclb
