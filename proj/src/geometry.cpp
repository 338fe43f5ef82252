#include "ladeep/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace ladeep::geom {

namespace {

constexpr double kAntiParallelTol = 1e-9;

double turn_angle(const Vec3& a, const Vec3& b) { return std::atan2(norm(cross(a, b)), dot(a, b)); }

}  // namespace

Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (!(n > 1e-300)) throw GeometryError("cannot normalize a zero-length vector");
  return a * (1.0 / n);
}

CharLine::CharLine(std::vector<Point3> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw GeometryError("characteristic line needs at least 2 points");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!is_finite(points_[i]))
      throw GeometryError("non-finite coordinate at point " + std::to_string(i));
    if (i > 0 && distance(points_[i - 1], points_[i]) <= kMinSegment)
      throw GeometryError("coincident consecutive points at index " + std::to_string(i));
  }
}

double arc_length(const CharLine& line) {
  double total = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) total += distance(line[i - 1], line[i]);
  return total;
}

std::vector<double> cumulative_length(const CharLine& line) {
  std::vector<double> s(line.size(), 0.0);
  for (std::size_t i = 1; i < line.size(); ++i) s[i] = s[i - 1] + distance(line[i - 1], line[i]);
  return s;
}

Point3 point_at_length(const CharLine& line, std::span<const double> cumulative, double s) {
  if (s <= 0.0) return line.front();
  if (s >= cumulative.back()) return line.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), s);
  const std::size_t hi = static_cast<std::size_t>(it - cumulative.begin());
  const std::size_t lo = hi - 1;
  const double t = (s - cumulative[lo]) / (cumulative[hi] - cumulative[lo]);
  return line[lo] + (line[hi] - line[lo]) * t;
}

namespace {

// Walks the polyline placing points at chord distance h from each other.
// Returns the distance from the last interior point to the end of the line
// minus h, or -inf when the walk leaves the line early.
double chord_walk(const CharLine& line, std::size_t m, double h, std::vector<Point3>* out) {
  std::size_t seg = 0;
  double t = 0.0;
  Point3 cur = line.front();
  if (out) out->assign(1, cur);
  for (std::size_t k = 1; k + 1 < m; ++k) {
    bool placed = false;
    while (seg + 1 < line.size()) {
      const Point3 a = line[seg], b = line[seg + 1];
      if (distance(b, cur) >= h) {
        // Larger root of |a + s (b - a) - cur| = h, which lies in [t, 1].
        const Vec3 d = b - a, f = a - cur;
        const double qa = dot(d, d), qb = 2.0 * dot(f, d), qc = dot(f, f) - h * h;
        const double disc = std::max(qb * qb - 4.0 * qa * qc, 0.0);
        t = std::clamp((-qb + std::sqrt(disc)) / (2.0 * qa), t, 1.0);
        cur = a + d * t;
        placed = true;
        break;
      }
      ++seg;
      t = 0.0;
    }
    if (!placed) return -std::numeric_limits<double>::infinity();
    if (out) out->push_back(cur);
  }
  return distance(line.back(), cur) - h;
}

}  // namespace

CharLine resample_uniform(const CharLine& line, std::size_t m) {
  if (m < 2) throw GeometryError("resample_uniform requires M >= 2");
  const auto cum = cumulative_length(line);
  const double total = cum.back();
  if (total < 1e-9) throw GeometryError("cannot resample a degenerate line");
  std::vector<Point3> out;
  if (m > 2) {
    // Equal chords: the output is then uniform in its own arc length, which
    // makes resampling idempotent. The spacing is found by bisection.
    double lo = 0.0, hi = total / static_cast<double>(m - 1);
    if (chord_walk(line, m, hi, nullptr) >= 0.0) {
      lo = hi;
    } else {
      for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (chord_walk(line, m, mid, nullptr) >= 0.0 ? lo : hi) = mid;
      }
    }
    chord_walk(line, m, lo, &out);
  } else {
    out.push_back(line.front());
  }
  out.push_back(line.back());
  return CharLine(std::move(out));
}

TurningDecomposition turning_decompose(const CharLine& line) {
  const std::size_t m = line.size();
  TurningDecomposition d;
  d.start_point = line.front();
  std::vector<Vec3> dirs(m - 1);
  d.seg_lengths.resize(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    const Vec3 seg = line[i + 1] - line[i];
    d.seg_lengths[i] = norm(seg);
    dirs[i] = seg * (1.0 / d.seg_lengths[i]);
  }
  d.start_dir = dirs.front();
  d.turns.resize(m >= 2 ? m - 2 : 0);
  for (std::size_t i = 0; i + 2 < m; ++i) {
    const Vec3 c = cross(dirs[i], dirs[i + 1]);
    const double s = norm(c);
    const double angle = std::atan2(s, dot(dirs[i], dirs[i + 1]));
    if (angle > std::numbers::pi - kAntiParallelTol)
      throw GeometryError("anti-parallel successive segments at index " + std::to_string(i + 1));
    d.turns[i] = s > 0.0 ? c * (angle / s) : Vec3{};
  }
  return d;
}

CharLine rebuild_from_turnings(const TurningDecomposition& d, double scale) {
  if (!std::isfinite(scale)) throw GeometryError("rebuild scale must be finite");
  std::vector<Point3> pts;
  pts.reserve(d.seg_lengths.size() + 1);
  pts.push_back(d.start_point);
  Vec3 dir = normalized(d.start_dir);
  for (std::size_t i = 0; i < d.seg_lengths.size(); ++i) {
    pts.push_back(pts.back() + dir * d.seg_lengths[i]);
    if (i < d.turns.size()) dir = normalized(rotate(dir, d.turns[i] * scale));
  }
  return CharLine(std::move(pts));
}

std::vector<Vec3> vertex_tangents(const CharLine& line) {
  const std::size_t m = line.size();
  std::vector<Vec3> t(m);
  t.front() = normalized(line[1] - line[0]);
  t.back() = normalized(line[m - 1] - line[m - 2]);
  for (std::size_t i = 1; i + 1 < m; ++i) {
    const Vec3 chord = line[i + 1] - line[i - 1];
    if (norm(chord) < 1e-12)
      throw GeometryError("anti-parallel successive tangents at index " + std::to_string(i));
    t[i] = normalized(chord);
  }
  return t;
}

std::vector<double> discrete_curvature(const CharLine& line) {
  const auto d = turning_decompose(line);
  std::vector<double> k(d.turns.size());
  for (std::size_t i = 0; i < d.turns.size(); ++i)
    k[i] = norm(d.turns[i]) / (0.5 * (d.seg_lengths[i] + d.seg_lengths[i + 1]));
  return k;
}

// Double-reflection rotation-minimizing frames.
std::vector<Frame> rotation_minimizing_frames(const CharLine& line, const Vec3& seed_normal) {
  const auto tangents = vertex_tangents(line);
  const std::size_t m = line.size();
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if (turn_angle(tangents[i], tangents[i + 1]) > std::numbers::pi - kAntiParallelTol)
      throw GeometryError("anti-parallel successive tangents at index " + std::to_string(i));
  }

  const Vec3 t0 = tangents.front();
  const Vec3 projected = seed_normal - t0 * dot(seed_normal, t0);
  if (norm(projected) < 1e-9) throw GeometryError("seed normal is parallel to the first tangent");

  std::vector<Frame> frames(m);
  Vec3 r = normalized(projected);
  frames[0] = {line[0], t0, r, cross(t0, r)};
  for (std::size_t i = 0; i + 1 < m; ++i) {
    const Vec3 v1 = line[i + 1] - line[i];
    const double c1 = dot(v1, v1);
    const Vec3 r_l = r - v1 * (2.0 / c1 * dot(v1, r));
    const Vec3 t_l = tangents[i] - v1 * (2.0 / c1 * dot(v1, tangents[i]));
    const Vec3 v2 = tangents[i + 1] - t_l;
    const double c2 = dot(v2, v2);
    Vec3 next = c2 > 1e-300 ? r_l - v2 * (2.0 / c2 * dot(v2, r_l)) : r_l;
    const Vec3& t = tangents[i + 1];
    next = normalized(next - t * dot(next, t));
    frames[i + 1] = {line[i + 1], t, next, cross(t, next)};
    r = next;
  }
  return frames;
}

Vec3 rotate(const Vec3& v, const Vec3& r) {
  const double theta = norm(r);
  if (theta < 1e-300) return v;
  const Vec3 k = r * (1.0 / theta);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return v * c + cross(k, v) * s + k * (dot(k, v) * (1.0 - c));
}

Vec3 rotation_between(const Vec3& a, const Vec3& b) {
  if (std::abs(norm(a) - 1.0) > 1e-9 || std::abs(norm(b) - 1.0) > 1e-9)
    throw GeometryError("rotation_between expects unit vectors");
  const Vec3 c = cross(a, b);
  const double s = norm(c);
  const double angle = std::atan2(s, dot(a, b));
  if (angle > std::numbers::pi - kAntiParallelTol)
    throw GeometryError("rotation_between: anti-parallel vectors have no unique axis");
  if (s == 0.0) return {};
  return c * (angle / s);
}

}  // namespace ladeep::geom
