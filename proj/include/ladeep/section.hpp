#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ladeep/errors.hpp"

namespace ladeep::section {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

/// One sampled profile dimension and its uniform sampling interval.
struct FieldSpec {
  std::string_view name;
  double lo;
  double hi;
};

constexpr int kSectionTypes = 5;

/// Field layout of a profile family, in sampling order. Lengths and radii
/// in mm, angles in degrees (0 = +x, clockwise positive).
std::span<const FieldSpec> field_specs(int type_id);

struct SectionParams {
  int type_id = 1;
  std::vector<double> values;  // ordered as field_specs(type_id)

  double get(std::string_view name) const;
  friend bool operator==(const SectionParams&, const SectionParams&) = default;
};

/// Checks type id, field count and that every value lies in its interval.
void validate(const SectionParams& p);

/// Closed, counter-clockwise, simple polygon; first vertex not repeated.
struct Contour {
  std::vector<Vec2> vertices;
  friend bool operator==(const Contour&, const Contour&) = default;
};

/// Throws GeometryError unless the contour has >= 8 vertices, positive
/// signed area and no self-intersections.
void validate(const Contour& c);

/// Builds the thin-walled outline of a profile. Arcs are tessellated with
/// `arc_segments` segments each. Throws GeometryError naming the offending
/// parameters when the outline self-intersects.
Contour build_contour(const SectionParams& p, int arc_segments = 16);

double signed_area(std::span<const Vec2> polygon);
double section_area(const Contour& c);
Vec2 area_centroid(const Contour& c);
bool is_simple(std::span<const Vec2> polygon);

/// Nonzero winding number of the contour around p.
int winding_number(const Contour& c, Vec2 p);

/// Signed distance to the contour segments: negative inside, positive outside.
double signed_distance(const Contour& c, Vec2 p);

struct SdfGrid {
  std::size_t h = 0;  // rows, along y
  std::size_t w = 0;  // cols, along x
  double pitch = 0.0;
  Vec2 origin;  // center of cell (0, 0)
  std::vector<double> values;  // row-major h*w

  double at(std::size_t row, std::size_t col) const { return values[row * w + col]; }
  Vec2 cell_center(std::size_t row, std::size_t col) const {
    return {origin.x + static_cast<double>(col) * pitch, origin.y + static_cast<double>(row) * pitch};
  }
  friend bool operator==(const SdfGrid&, const SdfGrid&) = default;
};

/// Grid geometry that centers the contour bounding box with a 10% margin
/// and isotropic pitch. Values are left empty.
SdfGrid fit_grid(const Contour& c, std::size_t h, std::size_t w);

SdfGrid sdf_rasterize(const Contour& c, std::size_t h, std::size_t w);

/// Binary PGM, values affinely mapped to 0..255, row 0 of the grid at the bottom.
void write_pgm(const SdfGrid& grid, const std::filesystem::path& path);

}  // namespace ladeep::section
