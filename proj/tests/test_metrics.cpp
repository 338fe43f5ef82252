#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ladeep/metrics.hpp"
#include "test_helpers.hpp"

using namespace ladeep;
using geom::CharLine;
using geom::Point3;
using section::Contour;

namespace {

CharLine straight(double length, std::size_t m, Point3 offset = {}) {
  std::vector<Point3> pts(m);
  for (std::size_t i = 0; i < m; ++i) pts[i] = offset + Point3{length * double(i) / double(m - 1), 0.0, 0.0};
  return CharLine(std::move(pts));
}

Contour circle(double r, std::size_t n) {
  Contour c;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * double(i) / double(n);
    c.vertices.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return c;
}

Contour rectangle(double w, double h) { return Contour{{{0, 0}, {w, 0}, {w, h}, {0, h}}}; }

CharLine shifted(const CharLine& line, geom::Vec3 t) {
  std::vector<Point3> pts(line.points().begin(), line.points().end());
  for (auto& p : pts) p += t;
  return CharLine(std::move(pts));
}

}  // namespace

TEST_CASE("metric_mad") {
  Rng rng(1);
  const CharLine a = test::random_smooth_line(rng, 50);
  const CharLine b = test::random_smooth_line(rng, 50);
  CHECK(metrics::mad(a, a) == 0.0);
  CHECK(metrics::mad(shifted(a, {0, 2, 0}), a) == doctest::Approx(2.0).epsilon(1e-12));

  double sum = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    const double dx = a[i].x - b[i].x, dy = a[i].y - b[i].y, dz = a[i].z - b[i].z;
    sum += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  CHECK(std::abs(metrics::mad(a, b) - sum / 50.0) <= 1e-9);

  const geom::Vec3 t{3.0, -1.0, 0.5};
  CHECK(std::abs(metrics::mad(shifted(a, t), shifted(b, t)) - metrics::mad(a, b)) <= 1e-9);
  CHECK(metrics::mad(shifted(a, t), a) == doctest::Approx(geom::norm(t)));
  CHECK_THROWS_AS(metrics::mad(a, test::random_smooth_line(rng, 49)), GeometryError);
}

TEST_CASE("contour samples") {
  const Contour r = rectangle(4.0, 2.0);
  const auto pts = metrics::contour_samples(r, 6);
  REQUIRE(pts.size() == 6);
  // Perimeter 12, spacing 2, centroid (2, 1).
  const section::Vec2 expected[6] = {{-2, -1}, {0, -1}, {2, -1}, {2, 1}, {0, 1}, {-2, 1}};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(pts[i].x == doctest::Approx(expected[i].x));
    CHECK(pts[i].y == doctest::Approx(expected[i].y));
  }
  CHECK_THROWS_AS(metrics::contour_samples(r, 0), GeometryError);
}

TEST_CASE("metric_iou3d") {
  const Contour c = rectangle(10.0, 6.0);
  Rng rng(2);
  const CharLine line = test::random_smooth_line(rng, 60, 2.0, 0.05);

  CHECK(metrics::iou3d(line, line, c) == 100.0);
  CHECK(metrics::iou3d(line, shifted(line, {0, 0, 500}), c) == 0.0);

  const CharLine moved = shifted(line, {0.0, 2.5, 1.0});
  const double ab = metrics::iou3d(line, moved, c, 0.5);
  const double ba = metrics::iou3d(moved, line, c, 0.5);
  CHECK(ab == ba);
  CHECK(ab > 0.0);
  CHECK(ab < 100.0);

  SUBCASE("lateral shift of a round bar matches the lens area") {
    const double r = 10.0;
    const CharLine bar = straight(100.0, 11);
    const CharLine side = straight(100.0, 11, {0.0, r, 0.0});
    // Two circles of radius r at distance r.
    const double lens = 2.0 * r * r * std::acos(0.5) - 0.5 * r * std::sqrt(3.0) * r;
    const double expected = 100.0 * lens / (2.0 * std::numbers::pi * r * r - lens);
    const double got = metrics::iou3d(bar, side, circle(r, 720), r / 20.0);
    CHECK(std::abs(got - expected) <= 0.02 * expected);
  }
  CHECK_THROWS_AS(metrics::iou3d(line, line, c, 0.0), GeometryError);
}

TEST_CASE("metric_te") {
  const Contour c = rectangle(20.0, 10.0);
  Rng rng(3);
  const CharLine line = test::random_smooth_line(rng, 80);
  CHECK(metrics::te(line, line, c) == 0.0);
  const geom::Vec3 t{1.0, -2.0, 2.0};
  CHECK(metrics::te(shifted(line, t), line, c) == doctest::Approx(3.0).epsilon(1e-9));

  // Swing only the last segment: the tail point barely moves, the face turns.
  const CharLine base = straight(200.0, 101);
  std::vector<Point3> pts(base.points().begin(), base.points().end());
  const Point3 pivot = pts[99];
  pts[100] = pivot + geom::rotate(pts[100] - pivot, {0.0, 0.0, 0.2});
  const CharLine bent(std::move(pts));
  const double tail = geom::distance(bent.back(), base.back());
  CHECK(metrics::te(bent, base, c) > tail);
}

TEST_CASE("relative_improvement") {
  CHECK(metrics::relative_improvement(0.2052, 0.1698, false) == doctest::Approx(17.25).epsilon(0.01 / 17.25));
  CHECK(metrics::relative_improvement(0.4987, 0.4591, false) == doctest::Approx(7.94).epsilon(0.01 / 7.94));
  CHECK(metrics::relative_improvement(84.21, 86.58, true) == doctest::Approx(2.81).epsilon(0.01 / 2.81));
  CHECK_THROWS_AS(metrics::relative_improvement(0.0, 1.0, true), NumericError);
}

TEST_CASE("metrics report") {
  const auto r = metrics::summarize({{3, 1.0, 90.0, 2.0}, {7, 3.0, 70.0, 4.0}});
  CHECK(r.mad == 2.0);
  CHECK(r.iou3d == 80.0);
  CHECK(r.te == 3.0);
  const auto j = metrics::to_json(r);
  CHECK(j["mad"] == 2.0);
  CHECK(j["count"] == 2);
  CHECK(j["samples"][1]["index"] == 7);
  CHECK(j["samples"][0]["iou3d"] == 90.0);
}
