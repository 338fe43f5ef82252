#include "ladeep/design.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "ladeep/inference.hpp"
#include "ladeep/metrics.hpp"

namespace ladeep::design {

using geom::CharLine;
using geom::Point3;
using geom::Vec3;

Predictor oracle_predictor(const section::Contour& contour, double length, std::size_t m) {
  const double eta = oracle::stiffness_eta(contour);
  return [eta, length, m](const CharLine& mold) {
    return oracle::simulate_springback(oracle::simulate_loading(mold, length, m), eta);
  };
}

Predictor surrogate_predictor(const model::Checkpoint& ck, const section::SdfGrid& sdf, double length) {
  const auto& cfg = ck.config;
  if (sdf.h != cfg.h || sdf.w != cfg.w) throw DataError("section grid does not match the checkpoint config");
  model::Inputs<float> base;
  base.workpiece = model::line_tensor<float>(oracle::straight_workpiece(length, cfg.m));
  base.sdf = ad::Tensor<float>({1, cfg.h, cfg.w});
  for (std::size_t i = 0; i < sdf.values.size(); ++i) base.sdf.data[i] = static_cast<float>(sdf.values[i]);
  return [&ck, base, length](const CharLine& mold) {
    model::Inputs<float> in = base;
    const CharLine m = geom::resample_uniform(mold, ck.config.m);
    in.mold = model::line_tensor<float>(m);
    const auto motion = oracle::involute_motion(m, length);
    in.motion = ad::Tensor<float>({6});
    for (std::size_t k = 0; k < 6; ++k) in.motion.data[k] = static_cast<float>(motion[k]);
    return infer::predict(ck, in).final;
  };
}

CharLine project_mold(const CharLine& line, std::size_t m) {
  const CharLine r = geom::resample_uniform(line, m);
  const Vec3 rot = geom::rotation_between(geom::normalized(r[1] - r[0]), {1.0, 0.0, 0.0});
  std::vector<Point3> pts(m);
  for (std::size_t i = 0; i < m; ++i) pts[i] = geom::rotate(r[i] - r[0], rot);
  pts[0] = {0.0, 0.0, 0.0};
  return CharLine(std::move(pts));
}

CharLine bi_elliptic_target(const oracle::MoldParams& p, double length, std::size_t m) {
  const CharLine mold = oracle::mold_curve(p, 4 * m);
  const auto cum = geom::cumulative_length(mold);
  if (length > cum.back()) throw GeometryError("target length exceeds the mold curve");
  std::vector<Point3> pts;
  for (std::size_t i = 0; i < mold.size() && cum[i] < length - 1e-9; ++i) pts.push_back(mold[i]);
  pts.push_back(geom::point_at_length(mold, cum, length));
  return geom::resample_uniform(CharLine(std::move(pts)), m);
}

namespace {

double max_residual(const CharLine& target, const CharLine& final) {
  double worst = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) worst = std::max(worst, geom::distance(target[i], final[i]));
  return worst;
}

bool x_monotone(const CharLine& line) {
  for (std::size_t i = 0; i + 1 < line.size(); ++i)
    if (!(line[i + 1].x > line[i].x)) return false;
  return true;
}

}  // namespace

DesignResult design_mold(const CharLine& target, const Predictor& predict, const DesignOptions& opts) {
  if (!(opts.alpha > 0.0 && opts.alpha <= 1.0)) throw ConfigError("design step alpha must lie in (0, 1]");
  if (!(opts.tol >= 0.0)) throw ConfigError("design tolerance must be >= 0");
  const std::size_t m = target.size();

  DesignResult res;
  CharLine mold = target;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0;; ++k) {
    const CharLine final = predict(mold);
    if (final.size() != m) throw NumericError("predictor returned a line with " + std::to_string(final.size()) + " points");
    const double err = metrics::mad(final, target);
    if (!std::isfinite(err)) throw NumericError("predictor returned non-finite points");
    res.history.push_back({k, err, max_residual(target, final)});
    if (err < best) {
      best = err;
      res.mold = mold;
      res.final = final;
      res.best_k = k;
    }
    if (err <= opts.tol) {
      res.converged = true;
      break;
    }
    if (k == opts.max_iter) break;
    std::vector<Point3> next(m);
    for (std::size_t i = 0; i < m; ++i) next[i] = mold[i] + (target[i] - final[i]) * opts.alpha;
    mold = project_mold(CharLine(std::move(next)), m);
  }
  res.monotone_x = x_monotone(res.mold);
  return res;
}

void write_history_csv(const std::vector<DesignStep>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "k,mad_mm,max_residual_mm\n";
  char buf[96];
  for (const auto& s : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", s.k, s.mad_mm, s.max_residual_mm);
    out << buf;
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace ladeep::design
