#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ladeep/errors.hpp"

namespace ladeep::geom {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

using Point3 = Vec3;

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}
/// Throws GeometryError for vectors shorter than 1e-300.
Vec3 normalized(const Vec3& a);

/// Ordered 3D point sequence. Construction validates M >= 2, finite
/// coordinates and distinct consecutive points; order is never altered.
class CharLine {
 public:
  static constexpr double kMinSegment = 1e-9;

  CharLine() = default;
  explicit CharLine(std::vector<Point3> points);

  std::size_t size() const { return points_.size(); }
  const Point3& operator[](std::size_t i) const { return points_[i]; }
  const Point3& front() const { return points_.front(); }
  const Point3& back() const { return points_.back(); }
  std::span<const Point3> points() const { return points_; }

  friend bool operator==(const CharLine&, const CharLine&) = default;

 private:
  std::vector<Point3> points_;
};

struct TurningDecomposition {
  Point3 start_point;
  Vec3 start_dir;
  std::vector<double> seg_lengths;  // M-1
  std::vector<Vec3> turns;          // M-2 rotation vectors (axis * angle)
};

struct Frame {
  Point3 origin;
  Vec3 tangent;
  Vec3 normal;
  Vec3 binormal;
};

double arc_length(const CharLine& line);

/// Cumulative arc length at every vertex (first entry 0).
std::vector<double> cumulative_length(const CharLine& line);

/// Point at arc-length parameter s (clamped to [0, length]) by linear
/// interpolation along the polyline.
Point3 point_at_length(const CharLine& line, std::span<const double> cumulative, double s);

CharLine resample_uniform(const CharLine& line, std::size_t m);

TurningDecomposition turning_decompose(const CharLine& line);
CharLine rebuild_from_turnings(const TurningDecomposition& d, double scale);

/// Unit tangents by central differences, one-sided at the endpoints.
std::vector<Vec3> vertex_tangents(const CharLine& line);

/// Discrete curvature at interior vertices: turn angle over mean adjacent
/// segment length. Size M-2.
std::vector<double> discrete_curvature(const CharLine& line);

std::vector<Frame> rotation_minimizing_frames(const CharLine& line, const Vec3& seed_normal);

/// Rodrigues rotation of v by the rotation vector r (axis * angle).
Vec3 rotate(const Vec3& v, const Vec3& r);

/// Minimal rotation vector taking unit a onto unit b.
Vec3 rotation_between(const Vec3& a, const Vec3& b);

}  // namespace ladeep::geom
