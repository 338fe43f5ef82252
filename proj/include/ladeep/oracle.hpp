#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ladeep/geometry.hpp"
#include "ladeep/rng.hpp"
#include "ladeep/section.hpp"

namespace ladeep::oracle {

using geom::CharLine;

/// Two quarter ellipses: (a1, b1) in the xy plane, (a2, b2) in the xz
/// plane. The focus ratios are drawn but do not shape the curve.
struct MoldParams {
  double a1 = 0.0, b1 = 0.0, c_ratio1 = 0.0;
  double a2 = 0.0, b2 = 0.0, c_ratio2 = 0.0;
};

/// Working-arm load: displacement (mm) and rotation vector (rad).
struct MotionParams {
  std::array<double, 6> dof{};  // u_x, u_y, u_z, r_x, r_y, r_z

  double& operator[](std::size_t i) { return dof[i]; }
  double operator[](std::size_t i) const { return dof[i]; }
  friend bool operator==(const MotionParams&, const MotionParams&) = default;
};

struct Sample {
  section::SectionParams section;
  section::Contour contour;
  section::SdfGrid sdf;
  CharLine workpiece;  // straight, starting at the origin along +x
  CharLine mold;
  MotionParams motion;
  CharLine loaded_line;  // after loading
  CharLine final_line;   // after springback
  double eta = 0.0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

constexpr double kWorkpieceMin = 505.0;
constexpr double kWorkpieceMax = 550.0;

section::SectionParams sample_section(int type_id, Rng& rng);

/// Quarter-ellipse pair combined into one 3D curve over x in [0, min(a1, a2)].
CharLine mold_curve(const MoldParams& p, std::size_t m);
std::pair<MoldParams, CharLine> sample_mold(Rng& rng, std::size_t m);

/// Unit tangent at arc length s, interpolated between vertex tangents.
geom::Vec3 tangent_at_length(const CharLine& line, std::span<const double> cumulative, double s);

MotionParams involute_motion(const CharLine& mold, double length);
CharLine simulate_loading(const CharLine& mold, double length, std::size_t m);
double stiffness_eta(const section::Contour& c);
CharLine simulate_springback(const CharLine& loaded, double eta);
CharLine straight_workpiece(double length, std::size_t m);

struct GenConfig {
  std::size_t count = 3000;
  std::uint64_t seed = 0;
  std::array<double, 5> type_mix{1, 1, 1, 1, 1};
  std::size_t m = 240;
  std::size_t h = 128;
  std::size_t w = 64;
  int arc_segments = 16;
};

/// Generates sample `index` of a dataset. Every value is rounded to f32 so
/// that the on-disk form is lossless.
Sample make_sample(const GenConfig& cfg, std::uint64_t index, int type_id);

/// Runs the oracle for a given section, mold and workpiece length.
Sample simulate(const section::SectionParams& params, const CharLine& mold, double length,
                const GenConfig& cfg);

/// Rounds every stored value to single precision.
Sample to_storage_precision(Sample s);

/// Type of each sample index: largest-remainder quotas, shuffled by seed.
std::vector<int> assign_types(std::size_t count, const std::array<double, 5>& mix, std::uint64_t seed);

enum class Split { Train, Eval, Test };

struct DatasetManifest {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::size_t m = 0, h = 0, w = 0;
  std::array<double, 5> type_mix{};
  std::vector<std::string> files;
  std::vector<int> types;
  std::vector<std::size_t> train, eval, test;

  const std::vector<std::size_t>& indices(Split s) const;
};

Split parse_split(const std::string& name);

DatasetManifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

}  // namespace ladeep::oracle
