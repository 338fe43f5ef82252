#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "ladeep/geometry.hpp"
#include "ladeep/section.hpp"

namespace ladeep::metrics {

/// Mean distance between index-paired points, mm.
double mad(const geom::CharLine& pred, const geom::CharLine& gt);

/// RMF frames used to sweep a section along a line. The seed normal is +y,
/// or +z when the line starts along y.
std::vector<geom::Frame> sweep_frames(const geom::CharLine& line);

/// Contour translated so its area centroid is the origin.
section::Contour centered_contour(const section::Contour& c);

/// k points spaced uniformly by perimeter, starting at vertex 0, in the
/// centroid-centered frame.
std::vector<section::Vec2> contour_samples(const section::Contour& c, std::size_t k);

/// Volumetric overlap of the two swept solids in percent, voxelized at
/// `pitch` mm on their joint bounding box.
double iou3d(const geom::CharLine& pred, const geom::CharLine& gt, const section::Contour& contour,
             double pitch = 1.0);

/// Mean distance between k contour points placed in the tail frame of each line.
double te(const geom::CharLine& pred, const geom::CharLine& gt, const section::Contour& contour,
          std::size_t k = 64);

/// Relative change of `ours` against `second_best`, percent.
double relative_improvement(double second_best, double ours, bool higher_is_better);

struct SampleMetrics {
  std::size_t index = 0;  // dataset index
  double mad = 0.0;
  double iou3d = 0.0;
  double te = 0.0;
};

struct MetricsReport {
  double mad = 0.0;    // mm
  double iou3d = 0.0;  // percent
  double te = 0.0;     // mm
  std::vector<SampleMetrics> samples;
};

/// Means over the per-sample entries, summed in order.
MetricsReport summarize(std::vector<SampleMetrics> samples);

nlohmann::json to_json(const MetricsReport& r);

}  // namespace ladeep::metrics
