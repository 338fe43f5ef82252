#include "ladeep/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>

#include "ladeep/binary.hpp"
#include "ladeep/parallel.hpp"
#include "ladeep/rng.hpp"
#include "ladeep/sample_io.hpp"

namespace ladeep::train {

namespace fs = std::filesystem;
using model::ModelConfig;

std::array<double, 3> lambda_from_ranges(const std::array<double, 3>& ranges) {
  std::array<double, 3> out{};
  double total = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    if (!std::isfinite(ranges[a]) || ranges[a] < 0.0) throw NumericError("axis range must be finite and >= 0");
    if (ranges[a] >= 1e-6) total += ranges[a];
  }
  if (total == 0.0) throw NumericError("all axis ranges are zero; cannot weight the position loss");
  for (std::size_t a = 0; a < 3; ++a) out[a] = ranges[a] >= 1e-6 ? ranges[a] / total : 0.0;
  return out;
}

std::array<double, 3> lambda_weights(std::span<const oracle::Sample> samples) {
  if (samples.empty()) throw DataError("cannot compute loss weights from an empty split");
  std::array<double, 3> lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& s : samples)
    for (const auto& p : s.final_line.points()) {
      const double v[3] = {p.x, p.y, p.z};
      for (std::size_t a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], v[a]);
        hi[a] = std::max(hi[a], v[a]);
      }
    }
  return lambda_from_ranges({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
}

AdamState make_adam(const ParamSet<float>& params, std::vector<std::size_t> indices, double lr) {
  AdamState s;
  s.lr = lr;
  s.indices = std::move(indices);
  for (std::size_t i : s.indices) {
    s.m.emplace_back(params[i].value.shape);
    s.v.emplace_back(params[i].value.shape);
  }
  return s;
}

void adam_step(AdamState& s, ParamSet<float>& params, const ad::Grads<float>& grads, bool check_finite) {
  if (grads.size() != params.size()) throw NumericError("gradient count does not match the parameter set");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < s.indices.size(); ++k) {
    const std::size_t i = s.indices[k];
    auto& w = params[i].value.data;
    const auto& g = grads[i].data;
    if (g.size() != w.size()) throw NumericError("gradient shape mismatch for " + params[i].name);
    auto& m = s.m[k].data;
    auto& v = s.v[k].data;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      if (check_finite && !std::isfinite(gj)) throw NumericError("non-finite gradient in " + params[i].name);
      const double mj = s.beta1 * m[j] + (1.0 - s.beta1) * gj;
      const double vj = s.beta2 * v[j] + (1.0 - s.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      w[j] = static_cast<float>(w[j] - s.lr * (mj / c1) / (std::sqrt(vj / c2) + s.eps));
    }
  }
}

TrainData prepare(std::span<const oracle::Sample> samples, const ModelConfig& cfg) {
  TrainData d;
  d.inputs.reserve(samples.size());
  d.targets.reserve(samples.size());
  for (const auto& s : samples) {
    d.inputs.push_back(model::make_inputs<float>(s, cfg));
    d.targets.push_back(model::make_targets<float>(s, cfg));
  }
  return d;
}

TrainState init_state(const ModelConfig& cfg, const TrainOptions& opts, const std::array<double, 3>& lambda) {
  TrainState st;
  st.params = model::init_params<float>(cfg, opts.seed);
  st.lambda = lambda;
  std::array<std::vector<std::size_t>, 3> groups;
  for (std::size_t i = 0; i < st.params.size(); ++i) {
    const char g = model::param_group(st.params[i].name);
    groups[g == 'R' ? 0 : g == 'A' ? 1 : 2].push_back(i);
  }
  for (std::size_t g = 0; g < 3; ++g) st.adam[g] = make_adam(st.params, std::move(groups[g]), opts.lr);
  return st;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(stream_seed(seed ^ 0x5eedf00dULL, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

StepLosses train_step(const ModelConfig& cfg, TrainState& st, const TrainData& data, std::span<const std::size_t> batch,
                      const TrainOptions& opts) {
  if (batch.empty()) throw NumericError("empty batch");
  const std::size_t b = batch.size();
  std::vector<ad::Grads<float>> grads(b);
  std::vector<std::array<double, 3>> losses(b);
  const bool any = opts.enabled[0] || opts.enabled[1] || opts.enabled[2];

  parallel_for(b, [&](std::size_t k) {
    const std::size_t i = batch[k];
    ad::Tape<float> tape(opts.check_finite);
    model::Binder<float> binder(tape, st.params);
    const auto out = model::forward_full(binder, cfg, data.inputs[i]);
    const auto l = model::sample_losses(out, data.targets[i], st.lambda);
    losses[k] = {l.r.value().data[0], l.p_a.value().data[0], l.p_b.value().data[0]};
    grads[k] = ad::zero_grads(st.params);
    if (!any) return;
    // The three losses reach disjoint parameter groups, so one backward
    // pass over their sum yields each group's own gradient.
    std::vector<ad::Var<float>> parts;
    const ad::Var<float> all[3] = {l.r, l.p_a, l.p_b};
    for (std::size_t j = 0; j < 3; ++j)
      if (opts.enabled[j]) parts.push_back(all[j]);
    ad::Var<float> total = parts[0];
    for (std::size_t j = 1; j < parts.size(); ++j) total = ad::add(total, parts[j]);
    tape.backward(total);
    tape.accumulate_param_grads(grads[k]);
  });

  StepLosses out;
  out.epoch = st.epoch + 1;
  out.step = ++st.step;
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t j = 0; j < 3; ++j) out.loss[j] += losses[k][j];
  for (double& v : out.loss) v /= static_cast<double>(b);
  for (double v : out.loss)
    if (!std::isfinite(v)) throw NumericError("non-finite training loss at step " + std::to_string(out.step));

  ad::Grads<float> g = std::move(grads[0]);
  for (std::size_t k = 1; k < b; ++k)
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t j = 0; j < g[p].size(); ++j) g[p].data[j] += grads[k][p].data[j];
  const float inv = 1.0f / static_cast<float>(b);
  for (auto& t : g)
    for (float& v : t.data) v *= inv;

  for (std::size_t j = 0; j < 3; ++j)
    if (opts.enabled[j]) adam_step(st.adam[j], st.params, g, opts.check_finite);
  return out;
}

void run(const ModelConfig& cfg, TrainState& st, const TrainData& data, const TrainOptions& opts,
         const std::function<void(const StepLosses&)>& on_step, const std::function<void(const TrainState&)>& on_epoch) {
  if (data.size() == 0) throw DataError("no training samples");
  if (opts.batch == 0) throw ConfigError("batch size must be positive");
  for (auto& a : st.adam) a.lr = opts.lr;
  while (st.epoch < opts.epochs) {
    const auto order = epoch_order(data.size(), opts.seed, st.epoch);
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      if (opts.max_steps != 0 && st.step >= opts.max_steps) return;
      const std::size_t count = std::min(opts.batch, order.size() - start);
      const auto losses = train_step(cfg, st, data, std::span(order).subspan(start, count), opts);
      if (on_step) on_step(losses);
    }
    ++st.epoch;
    if (on_epoch) on_epoch(st);
  }
}

fs::path adam_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".adam"); }

namespace {

constexpr char kStateMagic[4] = {'L', 'D', 'A', 'S'};
constexpr std::uint32_t kStateVersion = 1;

[[noreturn]] void state_fail(const fs::path& p, const std::string& what) {
  throw DataError("optimizer state " + p.string() + ": " + what);
}

}  // namespace

void save_state(const fs::path& checkpoint, const ModelConfig& cfg, const TrainState& st) {
  model::save_checkpoint(checkpoint, cfg, st.params);
  bin::Writer w;
  w.bytes(kStateMagic, 4);
  w.u32(kStateVersion);
  w.u64(st.epoch);
  w.u64(st.step);
  for (double l : st.lambda) w.f64(l);
  for (const auto& a : st.adam) {
    w.f64(a.lr);
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps);
    w.u64(a.step);
    w.u32(static_cast<std::uint32_t>(a.indices.size()));
    for (std::size_t k = 0; k < a.indices.size(); ++k) {
      w.str(st.params[a.indices[k]].name);
      w.u32(static_cast<std::uint32_t>(a.m[k].size()));
      for (float v : a.m[k].data) w.f32(v);
      for (float v : a.v[k].data) w.f32(v);
    }
  }
  const fs::path path = adam_path(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("failed writing " + path.string());
}

TrainState load_state(const fs::path& checkpoint, const ModelConfig& cfg) {
  auto ck = model::load_checkpoint(checkpoint, &cfg);
  const fs::path path = adam_path(checkpoint);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open optimizer state " + path.string());
  bin::Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));

  char magic[4] = {};
  std::uint32_t version = 0;
  if (!r.bytes(magic, 4) || std::string_view(magic, 4) != std::string_view(kStateMagic, 4)) state_fail(path, "bad magic");
  if (!r.u32(version) || version != kStateVersion) state_fail(path, "unsupported version");
  TrainState st;
  st.params = std::move(ck.params);
  std::uint64_t epoch = 0;
  if (!r.u64(epoch) || !r.u64(st.step)) state_fail(path, "truncated header");
  st.epoch = static_cast<std::size_t>(epoch);
  for (double& l : st.lambda)
    if (!r.f64(l)) state_fail(path, "truncated header");
  for (auto& a : st.adam) {
    std::uint32_t count = 0;
    if (!r.f64(a.lr) || !r.f64(a.beta1) || !r.f64(a.beta2) || !r.f64(a.eps) || !r.u64(a.step) || !r.u32(count))
      state_fail(path, "truncated group header");
    if (count > st.params.size()) state_fail(path, "too many entries");
    for (std::uint32_t k = 0; k < count; ++k) {
      std::string name;
      std::uint32_t size = 0;
      if (!r.str(name) || !r.u32(size)) state_fail(path, "truncated entry");
      if (!st.params.contains(name)) state_fail(path, "unknown parameter " + name);
      const std::size_t idx = st.params.index(name);
      if (size != st.params[idx].value.size()) state_fail(path, "moment size mismatch for " + name);
      ad::Tensor<float> m(st.params[idx].value.shape), v(st.params[idx].value.shape);
      for (float& x : m.data)
        if (!r.f32(x)) state_fail(path, "truncated moments");
      for (float& x : v.data)
        if (!r.f32(x)) state_fail(path, "truncated moments");
      a.indices.push_back(idx);
      a.m.push_back(std::move(m));
      a.v.push_back(std::move(v));
    }
  }
  if (r.remaining() != 0) state_fail(path, "trailing bytes");
  std::size_t owned = 0;
  for (const auto& a : st.adam) owned += a.indices.size();
  if (owned != st.params.size()) state_fail(path, "moments do not cover every parameter");
  return st;
}

std::vector<oracle::Sample> load_split(const fs::path& data_dir, oracle::Split split, const ModelConfig& cfg,
                                       std::vector<std::size_t>* ids) {
  const auto manifest = oracle::read_manifest(data_dir);
  if (manifest.m != cfg.m || manifest.h != cfg.h || manifest.w != cfg.w)
    throw DataError("dataset (M=" + std::to_string(manifest.m) + ", " + std::to_string(manifest.h) + "x" +
                    std::to_string(manifest.w) + ") does not match the model config (M=" + std::to_string(cfg.m) +
                    ", " + std::to_string(cfg.h) + "x" + std::to_string(cfg.w) + ")");
  const auto& idx = manifest.indices(split);
  std::vector<oracle::Sample> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t k) { out[k] = io::read_sample(data_dir / manifest.files[idx[k]]); });
  if (ids) *ids = idx;
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

TrainResult train(const ModelConfig& requested, const TrainOptions& opts, const fs::path& data_dir, const fs::path& out_dir,
                  bool resume) {
  requested.validate();
  if (opts.batch == 0) throw ConfigError("batch size must be positive");
  if (!(opts.lr > 0.0)) throw ConfigError("learning rate must be positive");
  const auto samples = load_split(data_dir, oracle::Split::Train, requested);
  if (samples.empty()) throw DataError("train split of " + data_dir.string() + " is empty");
  ModelConfig cfg = requested;
  if (cfg.input_norm.empty()) cfg.input_norm = model::fit_input_norm(samples, cfg);
  const TrainData data = prepare(samples, cfg);

  TrainResult res;
  res.checkpoint = out_dir / "model.ldck";
  res.log = out_dir / "loss_log.csv";
  TrainState st = resume ? load_state(res.checkpoint, cfg) : init_state(cfg, opts, lambda_weights(samples));
  fs::create_directories(out_dir);

  std::ofstream log(res.log, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot open " + res.log.string() + " for writing");
  if (!resume) log << "epoch,step,loss_r,loss_p_a,loss_p_b\n";
  run(
      cfg, st, data, opts,
      [&](const StepLosses& s) {
        log << s.epoch << ',' << s.step << ',' << fmt(s.loss[0]) << ',' << fmt(s.loss[1]) << ',' << fmt(s.loss[2])
            << '\n';
        res.steps.push_back(s);
      },
      [&](const TrainState& state) {
        log.flush();
        save_state(res.checkpoint, cfg, state);
      });
  if (!fs::exists(res.checkpoint)) save_state(res.checkpoint, cfg, st);
  return res;
}

}  // namespace ladeep::train
