#include <doctest.h>

#include <numbers>

#include "ladeep/rng.hpp"
#include "ladeep/section.hpp"
#include "sdf_oracle.hpp"

using namespace ladeep;
using namespace ladeep::section;

namespace {

SectionParams uniform_params(int type_id, Rng& rng) {
  SectionParams p{type_id, {}};
  for (const auto& f : field_specs(type_id)) p.values.push_back(rng.uniform(f.lo, f.hi));
  return p;
}

SectionParams corner_params(int type_id, bool low) {
  SectionParams p{type_id, {}};
  for (const auto& f : field_specs(type_id)) p.values.push_back(low ? f.lo : f.hi);
  return p;
}

Contour regular_polygon(double r, int n, Vec2 c = {}) {
  Contour out;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    out.vertices.push_back({c.x + r * std::cos(t), c.y + r * std::sin(t)});
  }
  return out;
}

Contour square(double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  return Contour{{{lo, lo}, {mid, lo}, {hi, lo}, {hi, mid}, {hi, hi}, {mid, hi}, {lo, hi}, {lo, mid}}};
}

}  // namespace

TEST_CASE("field tables follow the tabulated intervals") {
  CHECK(field_specs(1).size() == 3);
  CHECK(field_specs(3)[0].name == "radius_1");
  CHECK(field_specs(3)[0].lo == 1.4);
  CHECK(field_specs(3)[0].hi == 1.6);
  CHECK_THROWS_AS(field_specs(6), GeometryError);
  SectionParams bad{1, {3.0, 3.0, 25.0}};
  CHECK_THROWS_WITH_AS(validate(bad), doctest::Contains("length_2"), GeometryError);
}

TEST_CASE("type 1 is a plain rectangle") {
  const Contour c = build_contour(SectionParams{1, {3.0, 3.0, 18.0}});
  CHECK(c.vertices.size() == 8);
  CHECK(section_area(c) == doctest::Approx(54.0).epsilon(1e-12));
  CHECK(signed_area(c.vertices) > 0.0);
}

TEST_CASE("every family yields simple outlines across its intervals") {
  Rng rng(2024);
  for (int type = 1; type <= kSectionTypes; ++type) {
    CAPTURE(type);
    for (bool low : {true, false}) CHECK_NOTHROW(validate(build_contour(corner_params(type, low))));
    for (int k = 0; k < 500; ++k) {
      SectionParams p = uniform_params(type, rng);
      if (k % 5 == 0) p.values[0] = field_specs(type)[0].lo;  // radius (or thickness) at its minimum
      const Contour c = build_contour(p);
      CHECK(c.vertices.size() >= 8);
      CHECK(is_simple(c.vertices));
      CHECK(signed_area(c.vertices) > 0.0);
    }
  }
}

TEST_CASE("outline area converges with arc tessellation") {
  Rng rng(8);
  for (int type = 2; type <= kSectionTypes; ++type) {
    const SectionParams p = uniform_params(type, rng);
    const double coarse = section_area(build_contour(p, 32));
    const double fine = section_area(build_contour(p, 64));
    CHECK(std::abs(coarse - fine) / fine < 1e-3);
  }
  CHECK_THROWS_AS(build_contour(uniform_params(2, rng), 4), GeometryError);
}

TEST_CASE("section_area") {
  CHECK(section_area(square(0.0, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  const double a64 = section_area(regular_polygon(1.0, 64));
  CHECK(std::abs(a64 - std::numbers::pi) / std::numbers::pi < 5e-3);
}

TEST_CASE("sdf_rasterize basic values") {
  SUBCASE("cell center on a contour vertex is zero") {
    // 15x15 grid over [-1, 1]^2: pitch 1/6, so (1, 1) is the center of cell (13, 13).
    const SdfGrid g = sdf_rasterize(square(-1.0, 1.0), 15, 15);
    CHECK(std::abs(g.at(13, 13)) < 1e-12);
    CHECK(g.at(7, 7) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("disk center is minus the radius") {
    const double r = 5.0;
    const Contour disk = regular_polygon(r, 64);
    const SdfGrid g = sdf_rasterize(disk, 33, 33);
    const double sagitta = r * (1.0 - std::cos(std::numbers::pi / 64));
    CHECK(std::abs(g.at(16, 16) + r) <= sagitta + 1e-12);
  }
  SUBCASE("non-simple contours are rejected") {
    const Contour bowtie{{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {3, 0}, {2, 1}, {1, 2}, {0, 3}}};
    CHECK_THROWS_AS(sdf_rasterize(bowtie, 16, 16), GeometryError);
  }
}

TEST_CASE("sdf_rasterize matches the brute-force oracle") {
  Rng rng(31);
  const Contour c = build_contour(uniform_params(3, rng));
  const SdfGrid g = sdf_rasterize(c, 128, 64);
  CHECK(test::max_sdf_oracle_deviation(c, g) < 1e-6);
  CHECK(sdf_rasterize(c, 128, 64) == g);
}

TEST_CASE("sdf sign convention and eikonal property") {
  Rng rng(77);
  for (int type = 1; type <= kSectionTypes; ++type) {
    const Contour c = build_contour(uniform_params(type, rng));
    const SdfGrid g = fit_grid(c, 128, 64);
    const double x0 = g.origin.x, x1 = g.origin.x + 63 * g.pitch;
    const double y0 = g.origin.y, y1 = g.origin.y + 127 * g.pitch;
    int inside = 0, outside = 0;
    while (inside < 1000 || outside < 1000) {
      const Vec2 p{rng.uniform(x0, x1), rng.uniform(y0, y1)};
      const double d = signed_distance(c, p);
      if (winding_number(c, p) != 0) {
        if (inside++ < 1000) CHECK(d < 0.0);
      } else if (outside++ < 1000) {
        CHECK(d > 0.0);
      }
    }
  }

  // |grad D| ~ 1 away from the contour and off the medial axis (where the
  // one-sided differences disagree in sign).
  const Contour rect = build_contour(SectionParams{1, {3.0, 3.5, 18.0}});
  const SdfGrid g = sdf_rasterize(rect, 128, 64);
  int checked = 0;
  for (std::size_t r = 1; r + 1 < g.h; ++r)
    for (std::size_t col = 1; col + 1 < g.w; ++col) {
      const double v = g.at(r, col);
      if (v > -2.0 * g.pitch) continue;
      const double fx = g.at(r, col + 1) - v, bx = v - g.at(r, col - 1);
      const double fy = g.at(r + 1, col) - v, by = v - g.at(r - 1, col);
      if (fx * bx <= 0.0 && std::abs(fx - bx) > 1e-9) continue;
      if (fy * by <= 0.0 && std::abs(fy - by) > 1e-9) continue;
      if (std::abs(fx - bx) > 0.5 * g.pitch || std::abs(fy - by) > 0.5 * g.pitch) continue;
      const double gx = (fx + bx) / (2.0 * g.pitch), gy = (fy + by) / (2.0 * g.pitch);
      const double mag = std::hypot(gx, gy);
      CHECK(mag >= 0.9);
      CHECK(mag <= 1.1);
      ++checked;
    }
  CHECK(checked > 100);
}
