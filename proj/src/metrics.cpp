#include "ladeep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ladeep::metrics {

using geom::CharLine;
using geom::Frame;
using geom::Point3;
using geom::Vec3;
using section::Contour;
using section::Vec2;

double mad(const CharLine& pred, const CharLine& gt) {
  if (pred.size() != gt.size())
    throw GeometryError("MAD needs lines of equal size, got " + std::to_string(pred.size()) + " and " +
                        std::to_string(gt.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += geom::distance(pred[i], gt[i]);
  return total / static_cast<double>(pred.size());
}

std::vector<Frame> sweep_frames(const CharLine& line) {
  const Vec3 t0 = geom::vertex_tangents(line).front();
  const Vec3 y{0.0, 1.0, 0.0};
  const bool along_y = geom::norm(geom::cross(t0, y)) < 1e-6;
  return geom::rotation_minimizing_frames(line, along_y ? Vec3{0.0, 0.0, 1.0} : y);
}

Contour centered_contour(const Contour& c) {
  const Vec2 o = section::area_centroid(c);
  Contour out = c;
  for (Vec2& v : out.vertices) v = {v.x - o.x, v.y - o.y};
  return out;
}

std::vector<Vec2> contour_samples(const Contour& c, std::size_t k) {
  if (k == 0) throw GeometryError("contour sample count must be positive");
  const Contour cc = centered_contour(c);
  const auto& v = cc.vertices;
  const std::size_t n = v.size();
  std::vector<double> cum(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + std::hypot(v[(i + 1) % n].x - v[i].x, v[(i + 1) % n].y - v[i].y);
  std::vector<Vec2> out(k);
  std::size_t seg = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double s = cum[n] * static_cast<double>(j) / static_cast<double>(k);
    while (seg + 1 < n && cum[seg + 1] <= s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0.0 ? (s - cum[seg]) / len : 0.0;
    const Vec2 a = v[seg], b = v[(seg + 1) % n];
    out[j] = {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
  }
  return out;
}

namespace {

struct Slab {
  Point3 origin;
  Vec3 t, n, b;
  double length;
};

std::vector<Slab> slabs(const CharLine& line) {
  const auto frames = sweep_frames(line);
  std::vector<Slab> out;
  out.reserve(line.size() - 1);
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec3 d = line[i + 1] - line[i];
    const double len = geom::norm(d);
    const Vec3 t = d * (1.0 / len);
    const Vec3 n = geom::normalized(frames[i].normal - t * geom::dot(frames[i].normal, t));
    out.push_back({line[i], t, n, geom::cross(t, n), len});
  }
  return out;
}

struct Box {
  Point3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
  Point3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};

  void add(const Point3& p) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
};

Box slab_box(const Slab& s, const Contour& c) {
  Box box;
  for (const Vec2& v : c.vertices) {
    const Point3 p = s.origin + s.n * v.x + s.b * v.y;
    box.add(p);
    box.add(p + s.t * s.length);
  }
  return box;
}

class Grid {
 public:
  Grid(const Box& box, double pitch) : lo_(box.lo), pitch_(pitch) {
    auto cells = [&](double a, double b) { return static_cast<std::size_t>(std::ceil((b - a) / pitch)) + 1; };
    nx_ = cells(box.lo.x, box.hi.x);
    ny_ = cells(box.lo.y, box.hi.y);
    nz_ = cells(box.lo.z, box.hi.z);
    const double total = static_cast<double>(nx_) * static_cast<double>(ny_) * static_cast<double>(nz_);
    if (total > 4e8) throw GeometryError("voxel grid too large; increase the pitch");
    flags_.assign(nx_ * ny_ * nz_, 0);
  }

  // Marks every cell whose center lies inside the slab's cross-section prism.
  void mark(const Slab& s, const Contour& c, const Box& cbox2d, unsigned char bit) {
    const Box box = slab_box(s, c);
    const auto [x0, x1] = range(box.lo.x, box.hi.x, lo_.x, nx_);
    const auto [y0, y1] = range(box.lo.y, box.hi.y, lo_.y, ny_);
    const auto [z0, z1] = range(box.lo.z, box.hi.z, lo_.z, nz_);
    for (std::size_t ix = x0; ix < x1; ++ix)
      for (std::size_t iy = y0; iy < y1; ++iy)
        for (std::size_t iz = z0; iz < z1; ++iz) {
          unsigned char& f = flags_[(ix * ny_ + iy) * nz_ + iz];
          if (f & bit) continue;
          const Vec3 d = center(ix, iy, iz) - s.origin;
          const double along = geom::dot(d, s.t);
          if (along < 0.0 || along > s.length) continue;
          const Vec2 q{geom::dot(d, s.n), geom::dot(d, s.b)};
          if (q.x < cbox2d.lo.x || q.x > cbox2d.hi.x || q.y < cbox2d.lo.y || q.y > cbox2d.hi.y) continue;
          if (section::winding_number(c, q) != 0) f |= bit;
        }
  }

  std::pair<std::size_t, std::size_t> overlap() const {
    std::size_t inter = 0, uni = 0;
    for (unsigned char f : flags_) {
      inter += f == 3;
      uni += f != 0;
    }
    return {inter, uni};
  }

 private:
  std::pair<std::size_t, std::size_t> range(double a, double b, double origin, std::size_t n) const {
    const double first = std::ceil((a - origin) / pitch_ - 0.5);
    const double last = std::floor((b - origin) / pitch_ - 0.5);
    const auto clamp = [n](double v) { return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n))); };
    return {clamp(first), clamp(last + 1.0)};
  }
  Point3 center(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return {lo_.x + (static_cast<double>(ix) + 0.5) * pitch_, lo_.y + (static_cast<double>(iy) + 0.5) * pitch_,
            lo_.z + (static_cast<double>(iz) + 0.5) * pitch_};
  }

  Point3 lo_;
  double pitch_;
  std::size_t nx_ = 0, ny_ = 0, nz_ = 0;
  std::vector<unsigned char> flags_;
};

}  // namespace

double iou3d(const CharLine& pred, const CharLine& gt, const Contour& contour, double pitch) {
  if (!(pitch > 0.0)) throw GeometryError("voxel pitch must be positive");
  const Contour c = centered_contour(contour);
  const auto a = slabs(pred);
  const auto b = slabs(gt);
  Box all;
  for (const auto* set : {&a, &b})
    for (const Slab& s : *set) {
      const Box sb = slab_box(s, c);
      all.add(sb.lo);
      all.add(sb.hi);
    }
  Box cbox;
  for (const Vec2& v : c.vertices) cbox.add({v.x, v.y, 0.0});

  Grid grid(all, pitch);
  for (const Slab& s : a) grid.mark(s, c, cbox, 1);
  for (const Slab& s : b) grid.mark(s, c, cbox, 2);
  const auto [inter, uni] = grid.overlap();
  if (uni == 0) throw GeometryError("degenerate sweep: no voxel inside either solid");
  return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

double te(const CharLine& pred, const CharLine& gt, const Contour& contour, std::size_t k) {
  const auto pts = contour_samples(contour, k);
  const Frame fp = sweep_frames(pred).back();
  const Frame fg = sweep_frames(gt).back();
  double total = 0.0;
  for (const Vec2& q : pts) {
    const Point3 a = fp.origin + fp.normal * q.x + fp.binormal * q.y;
    const Point3 b = fg.origin + fg.normal * q.x + fg.binormal * q.y;
    total += geom::distance(a, b);
  }
  return total / static_cast<double>(k);
}

double relative_improvement(double second_best, double ours, bool higher_is_better) {
  if (second_best == 0.0) throw NumericError("relative improvement against a zero baseline");
  const double diff = higher_is_better ? ours - second_best : second_best - ours;
  return diff / second_best * 100.0;
}

MetricsReport summarize(std::vector<SampleMetrics> samples) {
  MetricsReport r;
  for (const auto& s : samples) {
    r.mad += s.mad;
    r.iou3d += s.iou3d;
    r.te += s.te;
  }
  if (!samples.empty()) {
    const double n = static_cast<double>(samples.size());
    r.mad /= n;
    r.iou3d /= n;
    r.te /= n;
  }
  r.samples = std::move(samples);
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["mad"] = r.mad;
  j["iou3d"] = r.iou3d;
  j["te"] = r.te;
  j["count"] = r.samples.size();
  auto& per = j["samples"] = nlohmann::json::array();
  for (const auto& s : r.samples) per.push_back({{"index", s.index}, {"mad", s.mad}, {"iou3d", s.iou3d}, {"te", s.te}});
  return j;
}

}  // namespace ladeep::metrics
