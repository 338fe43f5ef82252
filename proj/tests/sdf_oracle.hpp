#pragma once

// Brute-force reference for the signed distance field: exhaustive
// point-to-segment distances and an even-odd crossing test. Kept separate
// from the library code on purpose.

#include <cmath>
#include <limits>

#include "ladeep/section.hpp"

namespace ladeep::test {

inline double oracle_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len_sq = dx * dx + dy * dy;
  double t = ((px - ax) * dx + (py - ay) * dy) / len_sq;
  if (t < 0.0) t = 0.0;
  if (t > 1.0) t = 1.0;
  const double qx = ax + t * dx - px, qy = ay + t * dy - py;
  return std::hypot(qx, qy);
}

inline bool oracle_inside(const section::Contour& c, double px, double py) {
  bool inside = false;
  const auto& v = c.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > py) != (v[j].y > py)) {
      const double x_cross = v[j].x + (py - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (px < x_cross) inside = !inside;
    }
  }
  return inside;
}

inline double oracle_sdf(const section::Contour& c, double px, double py) {
  double best = std::numeric_limits<double>::infinity();
  const auto& v = c.vertices;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    best = std::min(best, oracle_segment_distance(px, py, a.x, a.y, b.x, b.y));
  }
  return oracle_inside(c, px, py) ? -best : best;
}

/// Largest |grid - oracle| over all cells.
inline double max_sdf_oracle_deviation(const section::Contour& c, const section::SdfGrid& g) {
  double worst = 0.0;
  for (std::size_t r = 0; r < g.h; ++r)
    for (std::size_t col = 0; col < g.w; ++col) {
      const double px = g.origin.x + static_cast<double>(col) * g.pitch;
      const double py = g.origin.y + static_cast<double>(r) * g.pitch;
      worst = std::max(worst, std::abs(g.at(r, col) - oracle_sdf(c, px, py)));
    }
  return worst;
}

}  // namespace ladeep::test
