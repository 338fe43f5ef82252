#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "ladeep/model.hpp"
#include "ladeep/oracle.hpp"

using namespace ladeep;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ladeep");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ladeep_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("usage and help") {
  const auto none = run({});
  CHECK(none.code == 1);
  CHECK(none.out.find("gen-data") != std::string::npos);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"eval", "--data", "x"}).code == 1);
  CHECK(run({"eval", "--data", "x", "--ckpt", "y", "--split", "validation"}).code == 1);
}

TEST_CASE("pipeline smoke run") {
  const fs::path dir = scratch("smoke");
  const std::string data = (dir / "data").string();
  auto r = run({"gen-data", "--count", "50", "--seed", "2", "--out", data});
  REQUIRE(r.code == 0);

  write(dir / "run.cfg", "# small model\nc=16\ns_a=2\ns_b=2\nepochs=5\nseed=3\n");
  r = run({"train", "--data", data, "--config", (dir / "run.cfg").string(), "--out", (dir / "model").string()});
  REQUIRE(r.code == 0);
  std::ifstream log(dir / "model" / "loss_log.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  CHECK(lines == 1 + 5 * 5);

  const std::string ckpt = (dir / "model" / "model.ldck").string();
  r = run({"eval", "--data", data, "--ckpt", ckpt, "--split", "test", "--out", (dir / "report.json").string()});
  REQUIRE(r.code == 0);
  std::ifstream rep(dir / "report.json");
  const auto j = nlohmann::json::parse(rep);
  CHECK(j["count"] == 5);
  CHECK(j["split"] == "test");
  for (const char* k : {"mad", "iou3d", "te"}) CHECK(std::isfinite(j[k].get<double>()));

  const auto manifest = oracle::read_manifest(data);
  const std::string sample = (fs::path(data) / manifest.files[manifest.test[0]]).string();
  r = run({"infer", "--ckpt", ckpt, "--sample", sample, "--out", (dir / "pred").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "pred" / "final.csv"));
  r = run({"export-attn", "--ckpt", ckpt, "--sample", sample, "--out", (dir / "attn").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "attn" / "attn_b_1.pgm"));

  r = run({"design", "--target", sample, "--ckpt", ckpt, "--max-iter", "2", "--out", (dir / "design_nn").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "design_nn" / "history.csv"));

  SUBCASE("resuming from a corrupted checkpoint is a numeric failure") {
    auto ck = model::load_checkpoint(ckpt);
    for (auto& v : ck.params[0].value.data) v = std::nanf("");
    model::save_checkpoint(ckpt, ck.config, ck.params);
    r = run({"train", "--data", data, "--config", (dir / "run.cfg").string(), "--out", (dir / "model").string(),
             "--resume", "--epochs", "6"});
    CHECK(r.code == 3);
    CHECK(r.err.find("numeric") != std::string::npos);
  }
}

TEST_CASE("ten samples give one test sample") {
  const fs::path dir = scratch("ten");
  const std::string data = (dir / "d").string();
  REQUIRE(run({"gen-data", "--count", "10", "--seed", "7", "--out", data}).code == 0);
  write(dir / "run.cfg", "c=8\ns_a=1\ns_b=1\nepochs=1\n");
  REQUIRE(run({"train", "--data", data, "--config", (dir / "run.cfg").string(), "--out", (dir / "m").string()}).code == 0);
  const auto r = run({"eval", "--data", data, "--ckpt", (dir / "m" / "model.ldck").string(), "--split", "test"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["count"] == 1);
}

TEST_CASE("errors map to exit codes without partial output") {
  const fs::path dir = scratch("errors");
  write(dir / "bad.cfg", "epochs=3\nwidth=9\n");
  auto r = run({"train", "--data", (dir / "none").string(), "--config", (dir / "bad.cfg").string(), "--out",
                (dir / "out").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("unknown key") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));

  r = run({"train", "--data", (dir / "none").string(), "--out", (dir / "out").string()});
  CHECK(r.code == 2);
  CHECK_FALSE(fs::exists(dir / "out"));

  r = run({"gen-data", "--count", "5", "--out", (dir / "g").string()});
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(dir / "g"));
  CHECK(run({"gen-data", "--count", "20", "--types", "1,1", "--out", (dir / "g").string()}).code == 1);

  write(dir / "junk.ldck", "not a checkpoint");
  r = run({"export-attn", "--ckpt", (dir / "junk.ldck").string(), "--sample", "x", "--out", (dir / "a").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("magic") != std::string::npos);

  r = run({"design", "--target", "t.csv", "--oracle", "--ckpt", "c", "--out", (dir / "d").string()});
  CHECK(r.code == 1);
  write(dir / "bent.csv", "x,y,z\n0,0,0\n1,0,0\nfoo\n");
  r = run({"design", "--target", (dir / "bent.csv").string(), "--oracle", "--out", (dir / "d").string()});
  CHECK(r.code == 2);
}

TEST_CASE("design from a line file with the oracle") {
  const fs::path dir = scratch("design");
  std::string csv = "x,y,z\n";
  for (int i = 0; i < 240; ++i) {
    const double t = 520.0 * i / 239.0 / 900.0;  // arc of radius 900 mm
    csv += std::to_string(900.0 * std::sin(t)) + "," + std::to_string(900.0 * (1 - std::cos(t))) + ",0\n";
  }
  write(dir / "target.csv", csv);
  const auto r = run({"design", "--target", (dir / "target.csv").string(), "--oracle", "--type", "3", "--seed", "4",
                      "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("converged", 0) == 0);
  std::ifstream hist(dir / "out" / "history.csv");
  std::string header;
  std::getline(hist, header);
  CHECK(header == "k,mad_mm,max_residual_mm");
  CHECK(fs::exists(dir / "out" / "mold.csv"));
}
