#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ladeep/design.hpp"
#include "ladeep/inference.hpp"
#include "ladeep/run_config.hpp"
#include "ladeep/sample_io.hpp"
#include "ladeep/train.hpp"

namespace ladeep::cli {

namespace fs = std::filesystem;

namespace {

std::array<double, 5> parse_mix(const std::string& text) {
  std::array<double, 5> mix{};
  std::stringstream ss(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 5) throw ConfigError("--types takes exactly five comma-separated weights");
    try {
      std::size_t used = 0;
      mix[n] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("--types: invalid weight '" + item + "'");
    }
    ++n;
  }
  if (n != 5) throw ConfigError("--types takes exactly five comma-separated weights");
  return mix;
}

RunConfig config_or_default(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  cfg.validate();
  return cfg;
}

void write_json(const nlohmann::json& j, const std::string& path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw DataError("failed writing " + path);
}

struct GenArgs {
  std::size_t count = 3000;
  std::uint64_t seed = 0;
  std::string types = "1,1,1,1,1";
  std::string out;
  std::size_t m = 240, h = 128, w = 64;
};

struct TrainArgs {
  std::string data, config, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

struct EvalArgs {
  std::string data, ckpt, split = "test", out;
  std::optional<double> pitch;
  std::string config;
};

struct SampleArgs {
  std::string ckpt, sample, out;
};

struct DesignArgs {
  std::string target, ckpt, out, config;
  bool oracle = false;
  std::optional<double> tol, alpha;
  std::optional<std::size_t> max_iter;
  int type = 1;
  std::uint64_t seed = 0;
};

int gen_data(const GenArgs& a, std::ostream& out) {
  oracle::GenConfig g;
  g.count = a.count;
  g.seed = a.seed;
  g.type_mix = parse_mix(a.types);
  g.m = a.m;
  g.h = a.h;
  g.w = a.w;
  if (g.count < 10) throw ConfigError("--count must be at least 10");
  const auto manifest = oracle::generate_dataset(g, a.out);
  out << "wrote " << manifest.count << " samples to " << a.out << " (train " << manifest.train.size() << ", eval "
      << manifest.eval.size() << ", test " << manifest.test.size() << ")\n";
  return kOk;
}

int train_cmd(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = config_or_default(a.config);
  if (!a.data.empty()) cfg.data = a.data;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  if (cfg.data.empty()) throw ConfigError("no dataset: pass --data or set data= in the config");
  const auto res = train::train(cfg.model, cfg.train_options(), cfg.data, a.out, a.resume);
  if (!res.steps.empty()) {
    const auto& last = res.steps.back();
    out << "epoch " << last.epoch << " step " << last.step << ": loss_r " << last.loss[0] << ", loss_p_a "
        << last.loss[1] << ", loss_p_b " << last.loss[2] << "\n";
  }
  out << "checkpoint " << res.checkpoint.string() << "\n";
  return kOk;
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  RunConfig cfg = config_or_default(a.config);
  if (a.pitch) cfg.metric_pitch = *a.pitch;
  cfg.validate();
  const auto split = oracle::parse_split(a.split);
  const auto ck = model::load_checkpoint(a.ckpt);
  auto report = metrics::to_json(infer::evaluate(ck, a.data, split, cfg.metric_pitch));
  report["split"] = a.split;
  write_json(report, a.out, out);
  return kOk;
}

int infer_cmd(const SampleArgs& a, std::ostream& out) {
  const auto ck = model::load_checkpoint(a.ckpt);
  const auto sample = io::read_sample(a.sample);
  const auto p = infer::predict(ck, sample);
  fs::create_directories(a.out);
  infer::write_line_csv(p.loaded, fs::path(a.out) / "loaded.csv");
  infer::write_line_csv(p.final, fs::path(a.out) / "final.csv");
  out << "MAD to ground truth: loaded " << metrics::mad(p.loaded, sample.loaded_line) << " mm, final "
      << metrics::mad(p.final, sample.final_line) << " mm\n";
  return kOk;
}

int export_cmd(const SampleArgs& a, std::ostream& out) {
  const auto ck = model::load_checkpoint(a.ckpt);
  const auto sample = io::read_sample(a.sample);
  const auto files = infer::export_attention(ck, sample, a.out);
  out << "wrote " << files.size() << " files to " << a.out << "\n";
  return kOk;
}

int design_cmd(const DesignArgs& a, std::ostream& out) {
  if (a.oracle == !a.ckpt.empty()) throw ConfigError("design needs exactly one of --ckpt and --oracle");
  RunConfig cfg = config_or_default(a.config);
  if (a.tol) cfg.design_tol = *a.tol;
  if (a.alpha) cfg.design_alpha = *a.alpha;
  if (a.max_iter) cfg.design_max_iter = *a.max_iter;
  cfg.validate();
  if (a.type < 1 || a.type > section::kSectionTypes) throw ConfigError("--type must be 1..5");

  std::optional<model::Checkpoint> ck;
  if (!a.ckpt.empty()) ck = model::load_checkpoint(a.ckpt);

  // Either a line file, or a sample file whose final line and section are used.
  geom::CharLine target;
  section::Contour contour;
  if (fs::path(a.target).extension() == ".csv") {
    target = infer::read_line_csv(a.target);
    Rng rng(a.seed);
    contour = section::build_contour(oracle::sample_section(a.type, rng));
  } else {
    const auto s = io::read_sample(a.target);
    target = s.final_line;
    contour = s.contour;
  }
  if (ck) target = geom::resample_uniform(target, ck->config.m);
  const double length = geom::arc_length(target);

  const design::Predictor predict =
      ck ? design::surrogate_predictor(*ck, section::sdf_rasterize(contour, ck->config.h, ck->config.w), length)
         : design::oracle_predictor(contour, length, target.size());
  const auto res = design::design_mold(target, predict, {cfg.design_alpha, cfg.design_tol, cfg.design_max_iter});

  fs::create_directories(a.out);
  infer::write_line_csv(res.mold, fs::path(a.out) / "mold.csv");
  infer::write_line_csv(res.final, fs::path(a.out) / "final.csv");
  design::write_history_csv(res.history, fs::path(a.out) / "history.csv");
  out << (res.converged ? "converged" : "did not converge") << " after " << res.history.size() - 1
      << " iterations; best k=" << res.best_k << ", MAD " << res.history[res.best_k].mad_mm << " mm\n";
  if (!res.monotone_x) out << "warning: designed mold is not monotone in x\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Surrogate pipeline for stretch bending: data, training, evaluation and mold design", "ladeep"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate an oracle dataset");
  g->add_option("--count", gen.count, "number of samples")->default_val(3000);
  g->add_option("--seed", gen.seed, "dataset seed");
  g->add_option("--types", gen.types, "five comma-separated section type weights")->default_val("1,1,1,1,1");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--points", gen.m, "points per line")->default_val(240);
  g->add_option("--grid-h", gen.h, "SDF rows")->default_val(128);
  g->add_option("--grid-w", gen.w, "SDF columns")->default_val(64);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on the train split");
  t->add_option("--data", tr.data, "dataset directory");
  t->add_option("--config", tr.config, "key=value run config");
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--epochs", tr.epochs, "override the configured epoch count");
  t->add_option("--seed", tr.seed, "override the configured seed");
  t->add_flag("--resume", tr.resume, "continue from the checkpoint in --out");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  e->add_option("--split", ev.split, "train, eval or test")->check(CLI::IsMember({"train", "eval", "test"}));
  e->add_option("--out", ev.out, "JSON report path (stdout when absent)");
  e->add_option("--pitch", ev.pitch, "IoU voxel pitch in mm");
  e->add_option("--config", ev.config, "key=value run config");

  SampleArgs inf;
  auto* i = app.add_subcommand("infer", "predict the loaded and final lines of one sample");
  i->add_option("--ckpt", inf.ckpt, "checkpoint file")->required();
  i->add_option("--sample", inf.sample, "sample file")->required();
  i->add_option("--out", inf.out, "output directory")->required();

  DesignArgs de;
  auto* d = app.add_subcommand("design", "design a mold by displacement compensation");
  d->add_option("--target", de.target, "target line (.csv) or sample file")->required();
  d->add_option("--ckpt", de.ckpt, "use a trained model as the predictor");
  d->add_flag("--oracle", de.oracle, "use the oracle as the predictor");
  d->add_option("--tol", de.tol, "MAD tolerance in mm");
  d->add_option("--max-iter", de.max_iter, "iteration limit");
  d->add_option("--alpha", de.alpha, "step size in (0, 1]");
  d->add_option("--type", de.type, "section type for .csv targets")->default_val(1);
  d->add_option("--seed", de.seed, "seed for the sampled section of .csv targets");
  d->add_option("--config", de.config, "key=value run config");
  d->add_option("--out", de.out, "output directory")->required();

  SampleArgs ex;
  auto* x = app.add_subcommand("export-attn", "write attention maps of one sample as CSV and PGM");
  x->add_option("--ckpt", ex.ckpt, "checkpoint file")->required();
  x->add_option("--sample", ex.sample, "sample file")->required();
  x->add_option("--out", ex.out, "output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& pe) {
    if (args.size() <= 1) {
      out << app.help();
    } else {
      err << "error: " << pe.what() << "\n";
      err << "run with --help for usage\n";
    }
    return kUsage;
  }

  try {
    if (g->parsed()) return gen_data(gen, out);
    if (t->parsed()) return train_cmd(tr, out);
    if (e->parsed()) return eval_cmd(ev, out);
    if (i->parsed()) return infer_cmd(inf, out);
    if (d->parsed()) return design_cmd(de, out);
    if (x->parsed()) return export_cmd(ex, out);
  } catch (const ConfigError& ce) {
    err << "error: " << ce.what() << "\n";
    return kUsage;
  } catch (const NumericError& ne) {
    err << "numeric error: " << ne.what() << "\n";
    return kNumericError;
  } catch (const DataError& de_) {
    err << "data error: " << de_.what() << "\n";
    return kDataError;
  } catch (const GeometryError& ge) {
    err << "data error: " << ge.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& fe) {
    err << "data error: " << fe.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace ladeep::cli
