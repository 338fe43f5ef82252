// Acceptance checks, one verdict line per criterion.
//
//   acceptance [--criterion N]... [--work DIR]
//
// Exit status is 0 when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli.hpp"
#include "ladeep/design.hpp"
#include "ladeep/inference.hpp"
#include "ladeep/metrics.hpp"
#include "ladeep/sample_io.hpp"
#include "ladeep/train.hpp"
#include "sdf_oracle.hpp"
#include "test_helpers.hpp"

using namespace ladeep;
namespace fs = std::filesystem;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using model::ModelConfig;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_work;

fs::path workdir(const std::string& name) {
  const fs::path d = g_work / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

oracle::GenConfig dataset_config(std::size_t count, std::uint64_t seed) {
  oracle::GenConfig g;
  g.count = count;
  g.seed = seed;
  return g;
}

// ---------------------------------------------------------------------------

Verdict improvement_formula() {
  struct Row {
    double second, ours;
    bool higher;
    double expected;
  };
  const Row rows[] = {{0.2052, 0.1698, false, 17.25}, {84.21, 86.58, true, 2.81}, {0.4987, 0.4591, false, 7.94}};
  double worst = 0.0;
  std::string got;
  for (const auto& r : rows) {
    const double v = metrics::relative_improvement(r.second, r.ours, r.higher);
    worst = std::max(worst, std::abs(v - r.expected));
    got += fmt(" %.4f%%", v);
  }
  return {worst <= 0.01, "values" + got + ", max deviation " + fmt("%.4f", worst) + " pp"};
}

// ---------------------------------------------------------------------------

Tensor<double> random_tensor(ad::Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

// Reduces any output to a scalar with fixed random weights.
Var<double> probe(Tape<double>& tape, Var<double> out, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

Verdict gradient_suite() {
  using In = std::vector<Var<double>>;
  struct OpCase {
    const char* name;
    std::vector<ad::Shape> shapes;
    std::function<Var<double>(Tape<double>&, const In&)> f;
  };
  const std::vector<OpCase> ops = {
      {"matmul", {{3, 4}, {4, 5}}, [](auto&, const In& x) { return ad::matmul(x[0], x[1]); }},
      {"add", {{3, 4}, {3, 4}}, [](auto&, const In& x) { return ad::add(x[0], x[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto&, const In& x) { return ad::sub(x[0], x[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto&, const In& x) { return ad::mul(x[0], x[1]); }},
      {"scale", {{3, 4}}, [](auto&, const In& x) { return ad::scale(x[0], -1.7); }},
      {"add_bias", {{3, 4}, {4}}, [](auto&, const In& x) { return ad::add_bias(x[0], x[1]); }},
      {"repeat_rows", {{1, 4}}, [](auto&, const In& x) { return ad::repeat_rows(x[0], 3); }},
      {"gelu", {{3, 4}}, [](auto&, const In& x) { return ad::gelu(x[0]); }},
      {"softmax_rows", {{3, 5}}, [](auto&, const In& x) { return ad::softmax_rows(x[0]); }},
      {"layernorm", {{3, 6}, {6}, {6}}, [](auto&, const In& x) { return ad::layernorm(x[0], x[1], x[2]); }},
      {"conv2d k3 s1 p1", {{2, 6, 6}, {3, 2, 3, 3}, {3}}, [](auto&, const In& x) { return ad::conv2d(x[0], x[1], x[2], 1, 1); }},
      {"conv2d k4 s2 p1", {{2, 8, 8}, {3, 2, 4, 4}, {3}}, [](auto&, const In& x) { return ad::conv2d(x[0], x[1], x[2], 2, 1); }},
      {"upsample_nearest", {{2, 3, 3}}, [](auto&, const In& x) { return ad::upsample_nearest(x[0], 2); }},
      {"sum", {{3, 4}}, [](auto&, const In& x) { return ad::sum(x[0]); }},
      {"mean", {{3, 4}}, [](auto&, const In& x) { return ad::mean(x[0]); }},
      {"row_means", {{3, 4}}, [](auto&, const In& x) { return ad::row_means(x[0]); }},
      {"reshape", {{3, 4}}, [](auto&, const In& x) { return ad::reshape(x[0], {2, 6}); }},
      {"transpose", {{3, 4}}, [](auto&, const In& x) { return ad::transpose(x[0]); }},
      {"concat_cols", {{3, 2}, {3, 4}}, [](auto&, const In& x) { return ad::concat_cols(x[0], x[1]); }},
      {"concat_rows", {{2, 3}, {1, 3}, {4, 3}}, [](auto&, const In& x) { return ad::concat_rows(x); }},
      {"slice_rows", {{5, 3}}, [](auto&, const In& x) { return ad::slice_rows(x[0], 1, 3); }},
      {"column", {{4, 3}}, [](auto&, const In& x) { return ad::column(x[0], 1); }},
      {"l2norm", {{4, 3}}, [](auto&, const In& x) { return ad::l2norm(x[0]); }},
      {"linear", {{3, 4}, {4, 5}, {5}}, [](auto&, const In& x) { return ad::linear(x[0], x[1], x[2]); }},
  };

  Rng rng(2024);
  double worst_op = 0.0;
  std::string worst_name;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    std::vector<Tensor<double>> inputs;
    for (const auto& s : ops[i].shapes) inputs.push_back(random_tensor(s, rng));
    const auto& f = ops[i].f;
    const double err = ad::grad_check(
        [&f, i](Tape<double>& t, const In& x) {
          const auto out = f(t, x);
          return out.shape() == ad::Shape{1} ? out : probe(t, out, 100 + i);
        },
        inputs);
    if (err > worst_op || !std::isfinite(err)) {
      worst_op = std::isfinite(err) ? err : INFINITY;
      worst_name = ops[i].name;
    }
  }
  // detach contributes nothing to the gradient.
  Tape<double> tape;
  const auto x = tape.constant(random_tensor({3, 3}, rng));
  ad::ParamSet<double> one;
  one.add("p", random_tensor({3, 3}, rng));
  const auto p = tape.param(one, 0);
  tape.backward(ad::sum(ad::add(ad::mul(ad::detach(p), x), x)));
  ad::Grads<double> g = ad::zero_grads(one);
  tape.accumulate_param_grads(g);
  bool detach_ok = true;
  for (double v : g[0].data) detach_ok = detach_ok && v == 0.0;

  // The composed model, default sizes, on a real oracle sample. Each loss is
  // checked over the parameters it trains.
  const ModelConfig cfg;
  auto ps = model::init_params<double>(cfg, 77);
  const auto sample = oracle::make_sample(dataset_config(1, 5), 0, 4);
  const auto in = model::make_inputs<double>(sample, cfg);
  const auto tgt = model::make_targets<double>(sample, cfg);
  const std::array<double, 3> lambda{0.7, 0.2, 0.1};
  std::map<char, double> full;
  for (char group : {'A', 'B', 'R'}) {
    full[group] = ad::grad_check_params(
        ps,
        [&](Tape<double>& t) {
          model::Binder<double> b(t, ps);
          const auto l = model::sample_losses(model::forward_full(b, cfg, in), tgt, lambda);
          return group == 'A' ? l.p_a : group == 'B' ? l.p_b : l.r;
        },
        200, 31 + static_cast<std::uint64_t>(group), 1e-5,
        [group](std::string_view name) { return model::param_group(name) == group; });
  }
  const bool pass = worst_op <= 1e-6 && detach_ok && full['A'] <= 1e-4 && full['B'] <= 1e-4 && full['R'] <= 1e-4;
  return {pass, std::to_string(ops.size()) + " ops, worst " + fmt("%.2e", worst_op) + " (" + worst_name +
                    "), detach " + (detach_ok ? "ok" : "LEAKS") + "; full model loss_p(p^a) " +
                    fmt("%.2e", full['A']) + ", loss_p(p^b) " + fmt("%.2e", full['B']) + ", loss_r " +
                    fmt("%.2e", full['R'])};
}

// ---------------------------------------------------------------------------

Verdict sdf_equivalence() {
  Rng rng(404);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int type = 1 + i % section::kSectionTypes;
    const auto c = section::build_contour(oracle::sample_section(type, rng));
    const auto g = section::sdf_rasterize(c, 128, 64);
    worst = std::max(worst, test::max_sdf_oracle_deviation(c, g));
  }
  return {worst <= 1e-6, "20 contours (4 per type) at 128x64, max deviation " + fmt("%.2e", worst) + " mm"};
}

// ---------------------------------------------------------------------------

Verdict geometry_roundtrips() {
  Rng rng(505);
  double rebuild = 0.0, identity = 0.0, length = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 3 + rng.below(300);
    const auto line = test::random_smooth_line(rng, n, rng.uniform(0.5, 5.0), rng.uniform(0.01, 0.6));
    const auto d = geom::turning_decompose(line);
    rebuild = std::max(rebuild, test::max_point_distance(geom::rebuild_from_turnings(d, 1.0), line));
    identity = std::max(identity, test::max_point_distance(oracle::simulate_springback(line, 0.0), line));
    const double total = geom::arc_length(line);
    for (double s : {0.0, 0.25, 0.85, 1.0})
      length = std::max(length, std::abs(geom::arc_length(geom::rebuild_from_turnings(d, s)) - total) / total);
  }
  const bool pass = rebuild <= 1e-9 && identity <= 1e-9 && length <= 1e-12;
  return {pass, "100 lines: rebuild " + fmt("%.2e", rebuild) + " mm, eta=0 springback " + fmt("%.2e", identity) +
                    " mm, relative arc length change " + fmt("%.2e", length)};
}

// ---------------------------------------------------------------------------

template <typename T>
double attention_deviation(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const auto ps = model::init_params<T>(cfg, seed);
  model::Inputs<T> in;
  auto fill = [&](ad::Shape s, double spread) {
    Tensor<T> t(std::move(s));
    for (T& v : t.data) v = static_cast<T>(spread * rng.normal());
    return t;
  };
  in.workpiece = fill({cfg.m, 3}, 200.0);
  in.mold = fill({cfg.m, 3}, 200.0);
  in.motion = fill({6}, 50.0);
  in.sdf = fill({1, cfg.h, cfg.w}, 10.0);
  Tape<T> tape;
  model::Binder<T> b(tape, ps);
  const auto out = model::forward_full(b, cfg, in);
  double worst = 0.0;
  for (const auto* maps : {&out.attn_a, &out.attn_b})
    for (const auto& a : *maps) {
      const auto& v = a.value();
      for (std::size_t i = 0; i < v.dim(0); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < v.dim(1); ++j) {
          if (v.at(i, j) < 0) return INFINITY;
          total += static_cast<double>(v.at(i, j));
        }
        worst = std::max(worst, std::abs(total - 1.0));
      }
    }
  return worst;
}

Verdict attention_rows() {
  Rng rng(606);
  double worst64 = 0.0, worst32 = 0.0;
  for (int k = 0; k < 100; ++k) {
    ModelConfig cfg;
    cfg.y = 1 + rng.below(2);
    cfg.n = 6 * cfg.y;
    cfg.m = cfg.n * (1 + rng.below(4));
    cfg.c = 4u << rng.below(3);
    cfg.s_a = 1 + rng.below(4);
    cfg.s_b = 1 + rng.below(4);
    cfg.h = 16u << rng.below(2);
    cfg.w = 16u << rng.below(2);
    cfg.ffn_hidden = rng.below(2) ? 0 : 3 * cfg.c;
    worst64 = std::max(worst64, attention_deviation<double>(cfg, 1000 + k));
    worst32 = std::max(worst32, attention_deviation<float>(cfg, 1000 + k));
  }
  return {worst64 <= 1e-6 && worst32 <= 1e-6, "100 configurations, max |row sum - 1| " + fmt("%.2e", worst64) +
                                                  " (64-bit), " + fmt("%.2e", worst32) + " (32-bit)"};
}

// ---------------------------------------------------------------------------

Verdict end_to_end_learning() {
  const fs::path dir = workdir("learning");
  auto g = dataset_config(200, 1);
  oracle::generate_dataset(g, dir / "data");
  const ModelConfig cfg;
  train::TrainOptions opts;
  opts.epochs = 50;
  opts.lr = 1e-3;
  opts.batch = 8;
  opts.seed = 1;

  const auto samples = train::load_split(dir / "data", oracle::Split::Train, cfg);
  ModelConfig fitted = cfg;
  fitted.input_norm = model::fit_input_norm(samples, cfg);
  model::Checkpoint untrained{fitted, train::init_state(fitted, opts, train::lambda_weights(samples)).params};
  const double before = infer::evaluate(untrained, dir / "data", oracle::Split::Test).mad;

  const auto res = train::train(cfg, opts, dir / "data", dir / "run");
  const double after = infer::evaluate(model::load_checkpoint(res.checkpoint), dir / "data", oracle::Split::Test).mad;

  std::vector<double> avg(10, 0.0);
  std::vector<std::size_t> count(10, 0);
  for (const auto& s : res.steps)
    if (s.epoch <= 10) {
      avg[s.epoch - 1] += s.loss[train::kLossPB];
      ++count[s.epoch - 1];
    }
  bool monotone = true;
  std::string curve;
  for (std::size_t e = 0; e < 10; ++e) {
    avg[e] /= static_cast<double>(count[e]);
    if (e > 0 && !(avg[e] < avg[e - 1])) monotone = false;
    curve += (e ? "," : "") + fmt("%.3g", avg[e]);
  }
  const double ratio = before / after;
  return {ratio >= 5.0 && monotone, "test MAD " + fmt("%.2f", before) + " -> " + fmt("%.2f", after) + " mm (x" +
                                        fmt("%.1f", ratio) + "), loss_p(p^b) epochs 1-10 [" + curve + "]" +
                                        (monotone ? "" : " not monotone")};
}

// ---------------------------------------------------------------------------

Verdict group_isolation() {
  const fs::path dir = workdir("isolation");
  oracle::generate_dataset(dataset_config(200, 1), dir / "data");
  const ModelConfig cfg;
  const auto samples = train::load_split(dir / "data", oracle::Split::Train, cfg);
  const auto data = train::prepare(samples, cfg);
  const auto lambda = train::lambda_weights(samples);
  train::TrainOptions opts;
  opts.epochs = 1000;
  opts.max_steps = 100;
  opts.seed = 1;

  auto run = [&](std::array<bool, 3> enabled) {
    opts.enabled = enabled;
    auto st = train::init_state(cfg, opts, lambda);
    train::run(cfg, st, data, opts);
    return st.params;
  };
  const auto base = run({true, true, true});
  const char* loss_names[3] = {"loss_r", "loss_p(p^a)", "loss_p(p^b)"};
  const char groups[3] = {'R', 'A', 'B'};
  std::string held, broken;
  for (std::size_t zeroed = 0; zeroed < 3; ++zeroed) {
    std::array<bool, 3> enabled{true, true, true};
    enabled[zeroed] = false;
    const auto other = run(enabled);
    for (std::size_t gi = 0; gi < 3; ++gi) {
      if (gi == zeroed) continue;
      std::size_t differing = 0, total = 0;
      for (std::size_t i = 0; i < base.size(); ++i)
        if (model::param_group(base[i].name) == groups[gi]) {
          ++total;
          differing += base[i].value != other[i].value;
        }
      const std::string pair = std::string(" ") + loss_names[zeroed] + "->" + groups[gi];
      if (differing == 0) held += pair;
      else broken += pair + "(" + std::to_string(differing) + "/" + std::to_string(total) + " tensors differ)";
    }
  }

  // Gradient ownership: each loss sends gradient only into its own group.
  const auto ps = model::init_params<float>(cfg, 1);
  bool owned = true;
  for (std::size_t which = 0; which < 3; ++which) {
    Tape<float> tape;
    model::Binder<float> b(tape, ps);
    const auto l = model::sample_losses(model::forward_full(b, cfg, data.inputs[0]), data.targets[0], lambda);
    const Var<float> all[3] = {l.r, l.p_a, l.p_b};
    tape.backward(all[which]);
    auto gr = ad::zero_grads(ps);
    tape.accumulate_param_grads(gr);
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (model::param_group(ps[i].name) != groups[which])
        for (float v : gr[i].data) owned = owned && v == 0.0f;
  }
  return {broken.empty() && owned, "100 steps; unchanged:" + (held.empty() ? std::string(" none") : held) +
                                       "; changed:" + (broken.empty() ? std::string(" none") : broken) +
                                       "; gradient ownership " + (owned ? "exact" : "VIOLATED")};
}

// ---------------------------------------------------------------------------

Verdict design_loop() {
  Rng rng(909);
  std::size_t ok = 0;
  double worst = 0.0;
  std::size_t most_iters = 0;
  for (int t = 0; t < 20; ++t) {
    const auto [params, mold] = oracle::sample_mold(rng, 240);
    const double length = rng.uniform(oracle::kWorkpieceMin, oracle::kWorkpieceMax);
    const auto contour = section::build_contour(oracle::sample_section(1 + t % 5, rng));
    const auto target = design::bi_elliptic_target(params, length, 240);
    const auto r = design::design_mold(target, design::oracle_predictor(contour, length, 240), {0.8, 0.5, 20});
    const double mad = r.history[r.best_k].mad_mm;
    worst = std::max(worst, mad);
    most_iters = std::max(most_iters, r.best_k);
    ok += r.converged && mad <= 0.5 && r.best_k <= 20;
  }
  return {ok == 20, std::to_string(ok) + "/20 targets within 0.5 mm, worst final MAD " + fmt("%.3f", worst) +
                        " mm, most iterations " + std::to_string(most_iters)};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return out;
}

Verdict determinism() {
  const fs::path dir = workdir("determinism");
  auto pipeline = [&](const fs::path& root) {
    fs::create_directories(root);
    std::ofstream(root / "run.cfg") << "c=16\ns_a=2\ns_b=2\nepochs=2\nseed=4\n";
    std::ostringstream sink;
    auto call = [&](std::vector<std::string> args) {
      args.insert(args.begin(), "ladeep");
      if (cli::run(args, sink, sink) != 0) throw std::runtime_error("command failed: " + args[1] + "\n" + sink.str());
    };
    call({"gen-data", "--count", "20", "--seed", "9", "--out", (root / "data").string()});
    call({"train", "--data", (root / "data").string(), "--config", (root / "run.cfg").string(), "--out",
          (root / "model").string()});
    call({"eval", "--data", (root / "data").string(), "--ckpt", (root / "model" / "model.ldck").string(), "--split",
          "test", "--out", (root / "report.json").string()});
    const auto manifest = oracle::read_manifest(root / "data");
    call({"export-attn", "--ckpt", (root / "model" / "model.ldck").string(), "--sample",
          (root / "data" / manifest.files[manifest.test[0]]).string(), "--out", (root / "attn").string()});
    return tree_contents(root);
  };
  const auto a = pipeline(dir / "first");
  const auto b = pipeline(dir / "second");
  std::string diff;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) diff += " " + name;
  }
  if (a.size() != b.size()) diff += " (file sets differ)";
  return {diff.empty(), std::to_string(a.size()) + " files from gen-data, train, eval, export-attn" +
                            (diff.empty() ? std::string(" identical") : " differ:" + diff)};
}

struct Criterion {
  int id;
  const char* title;
  double budget_s;  // wall-clock limit, 0 = none
  Verdict (*run)();
};

const Criterion kCriteria[] = {
    {2, "improvement formula", 1.0, improvement_formula},
    {3, "gradient suite", 300.0, gradient_suite},
    {4, "SDF oracle equivalence", 120.0, sdf_equivalence},
    {5, "geometry round trips", 0.0, geometry_roundtrips},
    {6, "attention rows", 0.0, attention_rows},
    {7, "end-to-end learning", 1800.0, end_to_end_learning},
    {8, "optimizer-group isolation", 0.0, group_isolation},
    {9, "design loop", 300.0, design_loop},
    {10, "determinism", 0.0, determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> selected;
  std::string work = (fs::temp_directory_path() / "ladeep_acceptance").string();
  app.add_option("--criterion", selected, "criterion number (repeatable); all when absent");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  g_work = work;

  bool all_pass = true;
  for (const auto& c : kCriteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s == 0.0 || secs < c.budget_s;
    const bool pass = v.pass && in_time;
    all_pass = all_pass && pass;
    std::cout << "criterion " << c.id << " [" << c.title << "]: " << (pass ? "PASS" : "FAIL") << " - " << v.detail
              << "; " << fmt("%.1f", secs) << " s" << (in_time ? "" : " (over budget)") << std::endl;
  }
  return all_pass ? 0 : 1;
}
