#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include "ladeep/geometry.hpp"
#include "ladeep/model.hpp"
#include "ladeep/oracle.hpp"

namespace ladeep::design {

/// Maps a mold line to the predicted final workpiece line.
using Predictor = std::function<geom::CharLine(const geom::CharLine& mold)>;

/// Loading then springback with the section's stiffness, motion derived
/// from each mold.
Predictor oracle_predictor(const section::Contour& contour, double length, std::size_t m);

/// p^b of a trained model. The workpiece is straight of the given length
/// and the motion comes from the involute of each mold. `ck` must outlive
/// the predictor.
Predictor surrogate_predictor(const model::Checkpoint& ck, const section::SdfGrid& sdf, double length);

/// Uniform resampling to m points, then a rigid motion that puts the first
/// point at the origin and the first chord on +x.
geom::CharLine project_mold(const geom::CharLine& line, std::size_t m);

/// First `length` mm of a bi-elliptic mold curve, m uniform points.
geom::CharLine bi_elliptic_target(const oracle::MoldParams& p, double length, std::size_t m);

struct DesignOptions {
  double alpha = 0.8;
  double tol = 0.5;  // mm, MAD
  std::size_t max_iter = 20;
};

struct DesignStep {
  std::size_t k = 0;
  double mad_mm = 0.0;
  double max_residual_mm = 0.0;
};

struct DesignResult {
  geom::CharLine mold;   // best iterate
  geom::CharLine final;  // its prediction
  std::size_t best_k = 0;
  bool converged = false;
  bool monotone_x = true;  // x strictly increasing along the best mold
  std::vector<DesignStep> history;
};

/// Displacement compensation starting from mold_0 = target. Running out of
/// iterations is reported through `converged`, not thrown.
DesignResult design_mold(const geom::CharLine& target, const Predictor& predict, const DesignOptions& opts = {});

void write_history_csv(const std::vector<DesignStep>& history, const std::filesystem::path& path);

}  // namespace ladeep::design
