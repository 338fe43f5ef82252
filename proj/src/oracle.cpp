#include "ladeep/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "ladeep/parallel.hpp"
#include "ladeep/sample_io.hpp"

namespace ladeep::oracle {

using geom::Point3;
using geom::Vec3;

namespace {

constexpr int kSectionTries = 100;
constexpr std::size_t kDenseMoldPoints = 20001;

// Kept out of line: GCC 11 at -O3 folds the narrowing away when the calls get
// SLP-vectorized together.
[[gnu::noinline]] double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

CharLine round_line(const CharLine& line) {
  std::vector<Point3> pts(line.points().begin(), line.points().end());
  for (auto& p : pts) p = {f32(p.x), f32(p.y), f32(p.z)};
  return CharLine(std::move(pts));
}

}  // namespace

section::SectionParams sample_section(int type_id, Rng& rng) {
  const auto specs = section::field_specs(type_id);
  for (int attempt = 0; attempt < kSectionTries; ++attempt) {
    section::SectionParams p{type_id, {}};
    for (const auto& f : specs) p.values.push_back(rng.uniform(f.lo, f.hi));
    try {
      section::build_contour(p);
      return p;
    } catch (const GeometryError&) {
    }
  }
  throw GeometryError("section type " + std::to_string(type_id) + ": " + std::to_string(kSectionTries) +
                      " consecutive rejected draws");
}

CharLine mold_curve(const MoldParams& p, std::size_t m) {
  const double x_max = std::min(p.a1, p.a2);
  // x = x_max sin(phi) clusters samples where the steeper quarter ellipse turns vertical.
  std::vector<Point3> dense(kDenseMoldPoints);
  for (std::size_t k = 0; k < kDenseMoldPoints; ++k) {
    const double phi = 0.5 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(kDenseMoldPoints - 1);
    const double x = k + 1 == kDenseMoldPoints ? x_max : x_max * std::sin(phi);
    const double ry = std::max(0.0, 1.0 - (x / p.a1) * (x / p.a1));
    const double rz = std::max(0.0, 1.0 - (x / p.a2) * (x / p.a2));
    dense[k] = {x, p.b1 - p.b1 * std::sqrt(ry), p.b2 - p.b2 * std::sqrt(rz)};
  }
  return geom::resample_uniform(CharLine(std::move(dense)), m);
}

std::pair<MoldParams, CharLine> sample_mold(Rng& rng, std::size_t m) {
  MoldParams p;
  p.a1 = rng.uniform(700.0, 900.0);
  p.c_ratio1 = rng.uniform(0.1, 0.3);
  p.b1 = p.a1 * rng.uniform(0.1, 0.3);
  p.a2 = rng.uniform(700.0, 900.0);
  p.c_ratio2 = rng.uniform(0.1, 0.3);
  p.b2 = p.a2 * rng.uniform(0.1, 0.3);
  return {p, mold_curve(p, m)};
}

Vec3 tangent_at_length(const CharLine& line, std::span<const double> cumulative, double s) {
  const auto tangents = geom::vertex_tangents(line);
  if (s <= 0.0) return tangents.front();
  if (s >= cumulative.back()) return tangents.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), s);
  const std::size_t hi = static_cast<std::size_t>(it - cumulative.begin());
  const std::size_t lo = hi - 1;
  const double t = (s - cumulative[lo]) / (cumulative[hi] - cumulative[lo]);
  return geom::normalized(tangents[lo] * (1.0 - t) + tangents[hi] * t);
}

MotionParams involute_motion(const CharLine& mold, double length) {
  if (!(length > 0.0)) throw GeometryError("workpiece length must be positive");
  const auto cum = geom::cumulative_length(mold);
  const double contact = std::min(length, cum.back());
  const Vec3 t = tangent_at_length(mold, cum, contact);
  const Point3 grip = geom::point_at_length(mold, cum, contact) + t * (length - contact);
  const Vec3 u = grip - Point3{length, 0.0, 0.0};
  const Vec3 r = geom::rotation_between({1.0, 0.0, 0.0}, t);
  return MotionParams{{u.x, u.y, u.z, r.x, r.y, r.z}};
}

CharLine simulate_loading(const CharLine& mold, double length, std::size_t m) {
  if (!(length > 0.0)) throw GeometryError("workpiece length must be positive");
  const auto cum = geom::cumulative_length(mold);
  const double contact = std::min(length, cum.back());
  std::vector<Point3> pts;
  for (std::size_t i = 0; i < mold.size() && cum[i] < contact - 1e-9; ++i) pts.push_back(mold[i]);
  const Point3 release = geom::point_at_length(mold, cum, contact);
  pts.push_back(release);
  if (length - contact > 1e-9) pts.push_back(release + tangent_at_length(mold, cum, contact) * (length - contact));
  return geom::resample_uniform(CharLine(std::move(pts)), m);
}

double stiffness_eta(const section::Contour& c) {
  return 0.08 + 0.12 * std::exp(-section::section_area(c) / 100.0);
}

CharLine simulate_springback(const CharLine& loaded, double eta) {
  if (!(eta >= 0.0 && eta < 1.0)) throw GeometryError("springback ratio must lie in [0, 1)");
  return geom::rebuild_from_turnings(geom::turning_decompose(loaded), 1.0 - eta);
}

CharLine straight_workpiece(double length, std::size_t m) {
  std::vector<Point3> pts(m);
  for (std::size_t i = 0; i < m; ++i) pts[i] = {length * static_cast<double>(i) / static_cast<double>(m - 1), 0.0, 0.0};
  return CharLine(std::move(pts));
}

Sample simulate(const section::SectionParams& params, const CharLine& mold, double length,
                const GenConfig& cfg) {
  Sample s;
  s.section = params;
  s.contour = section::build_contour(params, cfg.arc_segments);
  s.sdf = section::sdf_rasterize(s.contour, cfg.h, cfg.w);
  s.workpiece = straight_workpiece(length, cfg.m);
  s.mold = geom::resample_uniform(mold, cfg.m);
  s.motion = involute_motion(s.mold, length);
  s.loaded_line = simulate_loading(s.mold, length, cfg.m);
  s.eta = stiffness_eta(s.contour);
  s.final_line = simulate_springback(s.loaded_line, s.eta);
  return s;
}

Sample make_sample(const GenConfig& cfg, std::uint64_t index, int type_id) {
  Rng rng(stream_seed(cfg.seed, index));
  const auto params = sample_section(type_id, rng);
  const double length = rng.uniform(kWorkpieceMin, kWorkpieceMax);
  const auto [mold_params, mold] = sample_mold(rng, cfg.m);
  return to_storage_precision(simulate(params, mold, length, cfg));
}

Sample to_storage_precision(Sample s) {
  for (auto& v : s.section.values) v = f32(v);
  for (auto& v : s.contour.vertices) v = {f32(v.x), f32(v.y)};
  s.sdf.pitch = f32(s.sdf.pitch);
  s.sdf.origin = {f32(s.sdf.origin.x), f32(s.sdf.origin.y)};
  for (auto& v : s.sdf.values) v = f32(v);
  s.workpiece = round_line(s.workpiece);
  s.mold = round_line(s.mold);
  s.loaded_line = round_line(s.loaded_line);
  s.final_line = round_line(s.final_line);
  for (auto& v : s.motion.dof) v = f32(v);
  s.eta = f32(s.eta);
  return s;
}

std::vector<int> assign_types(std::size_t count, const std::array<double, 5>& mix, std::uint64_t seed) {
  double total = 0.0;
  for (double w : mix) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("type mix weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("type mix must have a positive weight");

  std::array<std::size_t, 5> quota{};
  std::array<double, 5> remainder{};
  std::size_t assigned = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    const double exact = static_cast<double>(count) * mix[t] / total;
    quota[t] = static_cast<std::size_t>(std::floor(exact));
    remainder[t] = exact - static_cast<double>(quota[t]);
    assigned += quota[t];
  }
  std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++quota[order[k % 5]];

  std::vector<int> types;
  types.reserve(count);
  for (std::size_t t = 0; t < 5; ++t) types.insert(types.end(), quota[t], static_cast<int>(t + 1));
  Rng rng(stream_seed(seed, ~0ULL));
  for (std::size_t i = types.size(); i > 1; --i) std::swap(types[i - 1], types[rng.below(i)]);
  return types;
}

const std::vector<std::size_t>& DatasetManifest::indices(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Eval: return eval;
    case Split::Test: return test;
  }
  return train;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "eval") return Split::Eval;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + name + "' (expected train|eval|test)");
}

DatasetManifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.count < 10) throw ConfigError("dataset count must be >= 10");
  if (cfg.m < 2) throw ConfigError("M must be >= 2");
  const auto types = assign_types(cfg.count, cfg.type_mix, cfg.seed);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw DataError("cannot create output directory " + out_dir.string());

  DatasetManifest man;
  man.count = cfg.count;
  man.seed = cfg.seed;
  man.m = cfg.m;
  man.h = cfg.h;
  man.w = cfg.w;
  man.type_mix = cfg.type_mix;
  man.types = types;
  man.files.resize(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.bin", i);
    man.files[i] = name;
  }

  parallel_for(cfg.count, [&](std::size_t i) {
    io::write_sample(make_sample(cfg, i, types[i]), out_dir / man.files[i]);
  });

  const std::size_t n_hold = cfg.count / 10;
  const std::size_t n_train = cfg.count - 2 * n_hold;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    if (i < n_train)
      man.train.push_back(i);
    else if (i < n_train + n_hold)
      man.eval.push_back(i);
    else
      man.test.push_back(i);
  }
  write_manifest(man, out_dir);
  return man;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  nlohmann::json j;
  j["count"] = m.count;
  j["seed"] = m.seed;
  j["M"] = m.m;
  j["h"] = m.h;
  j["w"] = m.w;
  j["type_mix"] = m.type_mix;
  j["files"] = m.files;
  j["types"] = m.types;
  j["split"] = {{"train", m.train}, {"eval", m.eval}, {"test", m.test}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.count = j.at("count");
    m.seed = j.at("seed");
    m.m = j.at("M");
    m.h = j.at("h");
    m.w = j.at("w");
    m.type_mix = j.at("type_mix");
    m.files = j.at("files").get<std::vector<std::string>>();
    m.types = j.at("types").get<std::vector<int>>();
    m.train = j.at("split").at("train").get<std::vector<std::size_t>>();
    m.eval = j.at("split").at("eval").get<std::vector<std::size_t>>();
    m.test = j.at("split").at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (m.files.size() != m.count) throw DataError("manifest file list does not match count");
  for (const auto* split : {&m.train, &m.eval, &m.test})
    for (std::size_t i : *split)
      if (i >= m.count) throw DataError("manifest split index out of range");
  return m;
}

}  // namespace ladeep::oracle
