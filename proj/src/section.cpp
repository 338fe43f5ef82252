#include "ladeep/section.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include "ladeep/parallel.hpp"

namespace ladeep::section {

namespace {

constexpr std::array<FieldSpec, 3> kType1{{
    {"thickness", 2.5, 4.0},
    {"length_1", 2.5, 4.0},
    {"length_2", 17.0, 20.0},
}};
constexpr std::array<FieldSpec, 6> kType2{{
    {"radius_1", 2.5, 3.0},
    {"angle_1s", 95.0, 110.0},
    {"angle_1e", 280.0, 310.0},
    {"angle_3s", 240.0, 270.0},
    {"thickness", 1.8, 2.2},
    {"length_2", 14.0, 16.0},
}};
constexpr std::array<FieldSpec, 7> kType3{{
    {"radius_1", 1.4, 1.6},
    {"angle_1s", 95.0, 110.0},
    {"angle_1e", 230.0, 250.0},
    {"angle_4s", 290.0, 310.0},
    {"thickness", 0.8, 1.2},
    {"length_2", 0.4, 0.6},
    {"length_3", 14.0, 16.0},
}};
constexpr std::array<FieldSpec, 8> kType4{{
    {"radius_1", 2.5, 3.0},
    {"radius_3", 1.5, 1.7},
    {"angle_1s", 95.0, 110.0},
    {"angle_1e", 280.0, 310.0},
    {"angle_3s", 210.0, 230.0},
    {"angle_4s", 240.0, 270.0},
    {"thickness", 1.2, 1.4},
    {"length_2", 14.0, 16.0},
}};
constexpr std::array<FieldSpec, 8> kType5{{
    {"radius_1", 2.5, 3.0},
    {"radius_3", 1.3, 1.5},
    {"angle_1s", 95.0, 110.0},
    {"angle_1e", 300.0, 310.0},
    {"angle_3s", 210.0, 230.0},
    {"thickness", 1.0, 1.2},
    {"length_2", 14.0, 16.0},
    {"length_4", 1.0, 2.0},
}};

// Straight flanges carry no tabulated length.
constexpr double kFlangeLength = 4.0;
// Bottom-lip angles are rotated so the tabulated start (210..230 deg) lands
// at the top of the lip circle, which then hangs below the web.
constexpr double kBottomArcShift = 120.0;

constexpr double deg(double d) { return d * std::numbers::pi / 180.0; }

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
double dot2(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double cross2(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double len2(Vec2 a) { return std::sqrt(dot2(a, a)); }

// Top-side angle convention: 0 deg along +x, clockwise positive.
Vec2 dir_top(double degrees) { return {std::cos(deg(degrees)), -std::sin(deg(degrees))}; }
// Bottom-side features mirror the convention about the horizontal axis.
Vec2 dir_bottom(double degrees) { return {std::cos(deg(degrees)), std::sin(deg(degrees))}; }

struct Feature {
  std::vector<std::string_view> params;
};

/// Centerline polyline with a feature tag per vertex.
struct Centerline {
  std::vector<Vec2> pts;
  std::vector<int> feature;
  std::vector<Feature> features;

  int add_feature(std::vector<std::string_view> names) {
    features.push_back({std::move(names)});
    return static_cast<int>(features.size()) - 1;
  }
  void push(Vec2 p, int f) {
    pts.push_back(p);
    feature.push_back(f);
  }
};

// Points of an arc on the top side, attached at `start` (excluded).
std::vector<Vec2> top_arc(Vec2 start, double radius, double s_deg, double e_deg, int segments) {
  const Vec2 center = start - dir_top(s_deg) * radius;
  std::vector<Vec2> out;
  for (int k = 1; k <= segments; ++k) {
    const double a = s_deg + (e_deg - s_deg) * k / segments;
    out.push_back(center + dir_top(a) * radius);
  }
  return out;
}

// Same on the bottom side; returned in order leaving `start`.
std::vector<Vec2> bottom_arc(Vec2 start, double radius, double s_deg, double e_deg, int segments) {
  const Vec2 center = start - dir_bottom(s_deg) * radius;
  std::vector<Vec2> out;
  for (int k = 1; k <= segments; ++k) {
    const double a = s_deg + (e_deg - s_deg) * k / segments;
    out.push_back(center + dir_bottom(a) * radius);
  }
  return out;
}

Vec2 top_arc_tangent(double degrees) {
  return {-std::sin(deg(degrees)), -std::cos(deg(degrees))};
}
Vec2 bottom_arc_tangent(double degrees) {
  return {-std::sin(deg(degrees)), std::cos(deg(degrees))};
}

Centerline channel_centerline(const SectionParams& p, int segs) {
  Centerline cl;
  const Vec2 bottom{0.0, 0.0};
  std::vector<Vec2> bottom_path;  // ordered leaving the spine bottom
  int f_bottom = -1;
  double height = 0.0;
  std::string_view height_name;

  switch (p.type_id) {
    case 2:
      f_bottom = cl.add_feature({"angle_3s"});
      bottom_path.push_back(bottom + dir_bottom(p.get("angle_3s")) * kFlangeLength);
      height_name = "length_2";
      break;
    case 3:
      f_bottom = cl.add_feature({"angle_4s"});
      bottom_path.push_back(bottom + dir_bottom(p.get("angle_4s")) * kFlangeLength);
      height_name = "length_3";
      break;
    case 4:
      f_bottom = cl.add_feature({"radius_3", "angle_3s", "angle_4s"});
      bottom_path = bottom_arc(bottom, p.get("radius_3"), p.get("angle_3s") - kBottomArcShift,
                               p.get("angle_4s") - kBottomArcShift, segs);
      height_name = "length_2";
      break;
    case 5: {
      f_bottom = cl.add_feature({"radius_3", "angle_3s", "length_4"});
      const double s = p.get("angle_3s") - kBottomArcShift;
      bottom_path = bottom_arc(bottom, p.get("radius_3"), s, s + 90.0, segs);
      bottom_path.push_back(bottom_path.back() + bottom_arc_tangent(s + 90.0) * p.get("length_4"));
      height_name = "length_2";
      break;
    }
    default:
      throw GeometryError("channel outline requested for type " + std::to_string(p.type_id));
  }
  height = p.get(height_name);

  for (auto it = bottom_path.rbegin(); it != bottom_path.rend(); ++it) cl.push(*it, f_bottom);
  const int f_spine = cl.add_feature({"thickness", height_name});
  cl.push(bottom, f_spine);
  const Vec2 top{0.0, height};
  cl.push(top, f_spine);

  const int f_top = p.type_id == 3 ? cl.add_feature({"radius_1", "angle_1s", "angle_1e", "length_2"})
                                   : cl.add_feature({"radius_1", "angle_1s", "angle_1e"});
  for (const Vec2& q : top_arc(top, p.get("radius_1"), p.get("angle_1s"), p.get("angle_1e"), segs))
    cl.push(q, f_top);
  if (p.type_id == 3) cl.push(cl.pts.back() + top_arc_tangent(p.get("angle_1e")) * p.get("length_2"), f_top);
  return cl;
}

// Offsets the centerline by +-t/2 with miter joins and returns the closed
// outline plus the feature tag of each outline edge.
std::pair<std::vector<Vec2>, std::vector<int>> thicken(const Centerline& cl, double thickness) {
  const std::size_t k = cl.pts.size();
  const double half = 0.5 * thickness;
  auto left_normal = [&](std::size_t seg) {
    const Vec2 d = cl.pts[seg + 1] - cl.pts[seg];
    const double l = len2(d);
    return Vec2{-d.y / l, d.x / l};
  };
  std::vector<Vec2> left(k), right(k);
  for (std::size_t i = 0; i < k; ++i) {
    Vec2 offset;
    if (i == 0) {
      offset = left_normal(0) * half;
    } else if (i + 1 == k) {
      offset = left_normal(k - 2) * half;
    } else {
      const Vec2 n0 = left_normal(i - 1);
      const Vec2 n1 = left_normal(i);
      Vec2 m = n0 + n1;
      const double ml = len2(m);
      if (ml < 1e-9) throw GeometryError("centerline folds back on itself");
      m = m * (1.0 / ml);
      offset = m * (half / std::max(dot2(m, n0), 0.2));
    }
    left[i] = cl.pts[i] + offset;
    right[i] = cl.pts[i] - offset;
  }
  std::vector<Vec2> outline;
  std::vector<int> tags;
  for (std::size_t i = 0; i < k; ++i) {
    outline.push_back(left[i]);
    tags.push_back(cl.feature[std::min(i + 1, k - 1)]);
  }
  for (std::size_t i = k; i-- > 0;) {
    outline.push_back(right[i]);
    tags.push_back(cl.feature[i]);
  }
  return {outline, tags};
}

int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross2(b - a, c - a);
  const double scale = std::max({len2(b - a), len2(c - a), 1.0});
  if (std::abs(v) <= 1e-12 * scale * scale) return 0;
  return v > 0 ? 1 : -1;
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const int o1 = orientation(a, b, c), o2 = orientation(a, b, d);
  const int o3 = orientation(c, d, a), o4 = orientation(c, d, b);
  if (o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

// First pair of non-adjacent intersecting edges, or {-1,-1}.
std::pair<long, long> first_intersection(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly[i], b = poly[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(a, b, poly[j], poly[(j + 1) % n]))
        return {static_cast<long>(i), static_cast<long>(j)};
    }
  }
  return {-1, -1};
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double ll = dot2(ab, ab);
  double t = ll > 0.0 ? dot2(p - a, ab) / ll : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return len2(p - (a + ab * t));
}

Contour rectangle(double width, double height) {
  const double hw = 0.5 * width;
  // Edge midpoints keep the vertex count at 8.
  return Contour{{{0, 0}, {hw, 0}, {width, 0}, {width, 0.5 * height},
                  {width, height}, {hw, height}, {0, height}, {0, 0.5 * height}}};
}

}  // namespace

std::span<const FieldSpec> field_specs(int type_id) {
  switch (type_id) {
    case 1: return kType1;
    case 2: return kType2;
    case 3: return kType3;
    case 4: return kType4;
    case 5: return kType5;
    default: throw GeometryError("section type id must be in 1..5, got " + std::to_string(type_id));
  }
}

double SectionParams::get(std::string_view name) const {
  const auto specs = field_specs(type_id);
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].name == name) return values.at(i);
  throw GeometryError("section type " + std::to_string(type_id) + " has no field " + std::string(name));
}

void validate(const SectionParams& p) {
  const auto specs = field_specs(p.type_id);
  if (p.values.size() != specs.size())
    throw GeometryError("section type " + std::to_string(p.type_id) + " expects " +
                        std::to_string(specs.size()) + " fields");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double v = p.values[i];
    // Float storage may round a bound by half an ulp.
    const double tol = 1e-6 * std::max(1.0, std::abs(specs[i].hi));
    if (!(v >= specs[i].lo - tol && v <= specs[i].hi + tol))
      throw GeometryError("section field " + std::string(specs[i].name) + " = " + std::to_string(v) +
                          " outside [" + std::to_string(specs[i].lo) + ", " +
                          std::to_string(specs[i].hi) + "]");
  }
}

double signed_area(std::span<const Vec2> polygon) {
  double a = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) a += cross2(polygon[i], polygon[(i + 1) % n]);
  return 0.5 * a;
}

double section_area(const Contour& c) { return std::abs(signed_area(c.vertices)); }

Vec2 area_centroid(const Contour& c) {
  const auto& v = c.vertices;
  const std::size_t n = v.size();
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 p = v[i], q = v[(i + 1) % n];
    const double w = cross2(p, q);
    a += w;
    cx += (p.x + q.x) * w;
    cy += (p.y + q.y) * w;
  }
  return {cx / (3.0 * a), cy / (3.0 * a)};
}

bool is_simple(std::span<const Vec2> polygon) { return first_intersection(polygon).first < 0; }

void validate(const Contour& c) {
  if (c.vertices.size() < 8) throw GeometryError("contour needs at least 8 vertices");
  if (!(signed_area(c.vertices) > 0.0)) throw GeometryError("contour must be counter-clockwise");
  if (!is_simple(c.vertices)) throw GeometryError("contour is not a simple polygon");
}

Contour build_contour(const SectionParams& p, int arc_segments) {
  validate(p);
  if (arc_segments < 8) throw GeometryError("arc_segments must be >= 8");
  if (p.type_id == 1) return rectangle(p.get("length_1"), p.get("length_2"));

  const Centerline cl = channel_centerline(p, arc_segments);
  auto [outline, tags] = thicken(cl, p.get("thickness"));
  const auto [i, j] = first_intersection(outline);
  if (i >= 0) {
    std::set<std::string_view> names;
    for (long e : {i, j})
      for (auto n : cl.features[tags[e]].params) names.insert(n);
    std::string msg = "section type " + std::to_string(p.type_id) + " outline self-intersects; parameters:";
    for (auto n : names) msg += " " + std::string(n);
    throw GeometryError(msg);
  }
  if (signed_area(outline) < 0.0) std::reverse(outline.begin(), outline.end());
  return Contour{std::move(outline)};
}

int winding_number(const Contour& c, Vec2 p) {
  int wn = 0;
  const auto& v = c.vertices;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = v[i], b = v[(i + 1) % n];
    const double is_left = cross2(b - a, p - a);
    if (a.y <= p.y) {
      if (b.y > p.y && is_left > 0) ++wn;
    } else if (b.y <= p.y && is_left < 0) {
      --wn;
    }
  }
  return wn;
}

double signed_distance(const Contour& c, Vec2 p) {
  const auto& v = c.vertices;
  const std::size_t n = v.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) best = std::min(best, point_segment_distance(p, v[i], v[(i + 1) % n]));
  if (best == 0.0) return 0.0;
  return winding_number(c, p) != 0 ? -best : best;
}

SdfGrid fit_grid(const Contour& c, std::size_t h, std::size_t w) {
  if (h < 8 || w < 8) throw GeometryError("SDF grid must be at least 8x8");
  double minx = std::numeric_limits<double>::infinity(), miny = minx;
  double maxx = -minx, maxy = -minx;
  for (const Vec2& q : c.vertices) {
    minx = std::min(minx, q.x);
    maxx = std::max(maxx, q.x);
    miny = std::min(miny, q.y);
    maxy = std::max(maxy, q.y);
  }
  SdfGrid g;
  g.h = h;
  g.w = w;
  g.pitch = std::max((maxy - miny) / (0.8 * static_cast<double>(h)),
                     (maxx - minx) / (0.8 * static_cast<double>(w)));
  const Vec2 center{0.5 * (minx + maxx), 0.5 * (miny + maxy)};
  g.origin = {center.x - 0.5 * static_cast<double>(w - 1) * g.pitch,
              center.y - 0.5 * static_cast<double>(h - 1) * g.pitch};
  return g;
}

SdfGrid sdf_rasterize(const Contour& c, std::size_t h, std::size_t w) {
  validate(c);
  SdfGrid g = fit_grid(c, h, w);
  g.values.assign(h * w, 0.0);
  parallel_for(h, [&](std::size_t row) {
    for (std::size_t col = 0; col < w; ++col) g.values[row * w + col] = signed_distance(c, g.cell_center(row, col));
  });
  return g;
}

void write_pgm(const SdfGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const auto [lo_it, hi_it] = std::minmax_element(grid.values.begin(), grid.values.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  out << "P5\n" << grid.w << " " << grid.h << "\n255\n";
  for (std::size_t r = grid.h; r-- > 0;) {
    for (std::size_t col = 0; col < grid.w; ++col) {
      const double t = span > 0.0 ? (grid.at(r, col) - lo) / span : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace ladeep::section
