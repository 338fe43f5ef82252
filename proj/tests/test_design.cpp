#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ladeep/design.hpp"
#include "ladeep/metrics.hpp"
#include "ladeep/run_config.hpp"

using namespace ladeep;
using geom::CharLine;
using geom::Point3;
namespace fs = std::filesystem;

namespace {

struct Case {
  CharLine target;
  section::Contour contour;
  double length;
};

Case random_case(Rng& rng, int type) {
  const auto [params, mold] = oracle::sample_mold(rng, 240);
  const double length = rng.uniform(oracle::kWorkpieceMin, oracle::kWorkpieceMax);
  const auto contour = section::build_contour(oracle::sample_section(type, rng));
  return {design::bi_elliptic_target(params, length, 240), contour, length};
}

}  // namespace

TEST_CASE("project_mold re-anchors") {
  std::vector<Point3> pts;
  for (int i = 0; i < 30; ++i) pts.push_back({5.0 + 2.0 * i, 1.0 + 0.8 * i + 0.01 * i * i, -3.0 + 0.5 * i});
  const CharLine p = design::project_mold(CharLine(pts), 25);
  CHECK(p.size() == 25);
  CHECK(p[0] == Point3{0, 0, 0});
  CHECK(std::abs(p[1].y) < 1e-12);
  CHECK(std::abs(p[1].z) < 1e-12);
  CHECK(p[1].x > 0.0);
  CHECK(geom::arc_length(p) == doctest::Approx(geom::arc_length(CharLine(pts))).epsilon(1e-3));
  for (std::size_t i = 0; i + 1 < p.size(); ++i)
    CHECK(geom::distance(p[i], p[i + 1]) == doctest::Approx(geom::distance(p[0], p[1])).epsilon(1e-9));
}

TEST_CASE("bi-elliptic target") {
  const oracle::MoldParams mp{800, 120, 0.2, 760, 150, 0.2};
  const CharLine t = design::bi_elliptic_target(mp, 520.0, 240);
  CHECK(t.size() == 240);
  CHECK(geom::arc_length(t) == doctest::Approx(520.0).epsilon(1e-4));
  CHECK(t[0] == Point3{0, 0, 0});
  // Points lie on the mold curve y = b1 - b1 sqrt(1 - x^2/a1^2).
  for (std::size_t i = 0; i < 240; i += 17) {
    const double x = t[i].x;
    CHECK(t[i].y == doctest::Approx(120.0 - 120.0 * std::sqrt(1.0 - x * x / (800.0 * 800.0))).epsilon(1e-3));
  }
  CHECK_THROWS_AS(design::bi_elliptic_target(mp, 2000.0, 240), GeometryError);
}

TEST_CASE("a straight target is a fixed point") {
  const CharLine line = oracle::straight_workpiece(520.0, 240);
  Rng rng(5);
  const auto contour = section::build_contour(oracle::sample_section(2, rng));
  const auto r = design::design_mold(line, design::oracle_predictor(contour, 520.0, 240));
  CHECK(r.converged);
  CHECK(r.best_k == 0);
  CHECK(r.history.size() == 1);
  CHECK(r.history[0].max_residual_mm < 1e-9);
}

TEST_CASE("oracle design loop on in-family targets") {
  Rng rng(17);
  for (int t = 0; t < 10; ++t) {
    CAPTURE(t);
    const Case c = random_case(rng, 1 + t % 5);
    const auto r = design::design_mold(c.target, design::oracle_predictor(c.contour, c.length, 240));
    CHECK(r.converged);
    CHECK(r.history[r.best_k].mad_mm <= 0.5);
    CHECK(r.best_k <= 20);
    CHECK(r.monotone_x);
    CHECK(r.mold[0] == Point3{0, 0, 0});
    // Residual max-norm over the first three iterations never grows.
    for (std::size_t k = 1; k < std::min<std::size_t>(3, r.history.size()); ++k)
      CHECK(r.history[k].max_residual_mm <= r.history[k - 1].max_residual_mm);
  }
}

TEST_CASE("closed loop recovers a mold for an oracle-made target") {
  Rng rng(23);
  oracle::GenConfig g;
  const auto sec = oracle::sample_section(4, rng);
  const auto [params, mold] = oracle::sample_mold(rng, 240);
  const double length = 530.0;
  const auto s = oracle::simulate(sec, mold, length, g);
  const auto predict = design::oracle_predictor(s.contour, length, 240);
  const auto r = design::design_mold(s.final_line, predict, {0.8, 0.2, 30});
  CHECK(r.converged);
  CHECK(metrics::mad(predict(r.mold), s.final_line) <= 0.2);
}

TEST_CASE("design options and history") {
  const CharLine line = oracle::straight_workpiece(510.0, 50);
  const auto p = [](const CharLine& m) { return m; };
  CHECK_THROWS_AS(design::design_mold(line, p, {0.0, 0.5, 20}), ConfigError);
  CHECK_THROWS_AS(design::design_mold(line, p, {1.5, 0.5, 20}), ConfigError);
  const auto bad = [](const CharLine&) { return oracle::straight_workpiece(10.0, 7); };
  CHECK_THROWS_AS(design::design_mold(line, bad), NumericError);

  // A predictor that always misses by 1 mm never converges; the best
  // iterate is still returned.
  const auto off = [](const CharLine& m) {
    std::vector<Point3> pts(m.points().begin(), m.points().end());
    for (auto& q : pts) q.z += 1.0;
    return CharLine(std::move(pts));
  };
  const auto r = design::design_mold(oracle::straight_workpiece(510.0, 50), off, {0.8, 0.5, 4});
  CHECK_FALSE(r.converged);
  CHECK(r.history.size() == 5);

  const fs::path f = fs::temp_directory_path() / "ladeep_test_history.csv";
  design::write_history_csv(r.history, f);
  std::ifstream in(f);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "k,mad_mm,max_residual_mm");
  CHECK(first.rfind("0,1,1", 0) == 0);
}

TEST_CASE("run config files") {
  const auto cfg = parse_run_config(
      "# training run\n"
      "epochs = 50\n"
      "lr=0.001   # Adam\n"
      "batch=8\n"
      "seed=1\n"
      "\n"
      "data = /tmp/set\n"
      "c=32\n"
      "eps=1e-6\n");
  CHECK(cfg.epochs == 50);
  CHECK(cfg.lr == 0.001);
  CHECK(cfg.batch == 8);
  CHECK(cfg.seed == 1);
  CHECK(cfg.data == fs::path("/tmp/set"));
  CHECK(cfg.model.c == 32);
  CHECK(cfg.model.eps == 1e-6);
  CHECK(cfg.model.m == 240);
  CHECK_NOTHROW(cfg.validate());
  const auto opts = cfg.train_options();
  CHECK(opts.epochs == 50);
  CHECK(opts.seed == 1);

  CHECK_THROWS_WITH_AS(parse_run_config("epochs=5\nlearning_rate=1\n"), doctest::Contains(":2: unknown key"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs=5\nepochs=6\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs=five\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs=-1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("epochs\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("lr=\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("m=250\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("design_alpha=1.5\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_run_config("batch=0\n").validate(), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), ConfigError);
}
