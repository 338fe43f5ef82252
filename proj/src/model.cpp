#include "ladeep/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "ladeep/binary.hpp"

namespace ladeep::model {

using ad::Shape;
using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  for (auto [name, v] : {std::pair{"M", m}, {"N", n}, {"C", c}, {"Y", y}, {"S_a", s_a}, {"S_b", s_b}, {"H", h}, {"W", w}})
    if (v < 1) fail(std::string(name) + " must be >= 1");
  if (m % n != 0) fail("M=" + std::to_string(m) + " is not a multiple of N=" + std::to_string(n));
  if (n != 6 * y) fail("N=" + std::to_string(n) + " must equal 6*Y=" + std::to_string(6 * y));
  if (heads != 1) fail("only single-head attention is supported (heads=" + std::to_string(heads) + ")");
  if (h % 16 != 0 || w % 16 != 0) fail("H and W must be multiples of 16");
  if (!(eps > 0.0) || !std::isfinite(eps)) fail("eps must be positive");
  if (!(coord_scale > 0.0) || !std::isfinite(coord_scale)) fail("coord_scale must be positive");
  if (input_norm.empty()) return;
  const InputNorm& nm = input_norm;
  if (nm.mold_mean.size() != 3 * m || nm.workpiece_mean.size() != 3 * m)
    fail("input normalization was fitted for a different M");
  auto finite = [](const auto& v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
  auto positive = [&](const auto& v) { return finite(v) && std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; }); };
  if (!finite(nm.mold_mean) || !finite(nm.workpiece_mean) || !finite(nm.motion_mean) || !positive(nm.mold_scale) ||
      !positive(nm.workpiece_scale) || !positive(nm.motion_scale))
    fail("input normalization must be finite with positive scales");
}

namespace {

constexpr std::array<std::size_t, 5> kCseChannels{1, 8, 16, 32, 64};
constexpr std::array<std::size_t, 5> kCsdChannels{64, 32, 16, 8, 1};
constexpr std::size_t kCseKernel = 4;  // stride 2, pad 1 halves each side exactly
constexpr std::size_t kCsdKernel = 3;

struct Slot {
  enum Init { Xavier, Zero, One, Position };
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in = 0, fan_out = 0;
};

void add_linear(std::vector<Slot>& v, const std::string& p, std::size_t in, std::size_t out) {
  v.push_back({p + ".weight", {in, out}, Slot::Xavier, in, out});
  v.push_back({p + ".bias", {out}, Slot::Zero});
}

void add_conv(std::vector<Slot>& v, const std::string& p, std::size_t ci, std::size_t co, std::size_t k) {
  v.push_back({p + ".weight", {co, ci, k, k}, Slot::Xavier, ci * k * k, co * k * k});
  v.push_back({p + ".bias", {co}, Slot::Zero});
}

void add_norm(std::vector<Slot>& v, const std::string& p, std::size_t c) {
  v.push_back({p + ".gain", {c}, Slot::One});
  v.push_back({p + ".bias", {c}, Slot::Zero});
}

void add_block(std::vector<Slot>& v, const std::string& p, std::size_t q_in, const ModelConfig& cfg) {
  add_linear(v, p + ".q", q_in, cfg.c);
  add_linear(v, p + ".k", cfg.c, cfg.c);
  add_linear(v, p + ".v", cfg.c, cfg.c);
  add_norm(v, p + ".ln1", cfg.c);
  add_linear(v, p + ".ffn.0", cfg.c, cfg.ffn());
  add_linear(v, p + ".ffn.1", cfg.ffn(), cfg.c);
  add_norm(v, p + ".ln2", cfg.c);
}

std::vector<Slot> layout(const ModelConfig& cfg) {
  const std::size_t g = cfg.points_per_token();
  std::vector<Slot> v;
  for (const std::string cle : {"cle_w", "cle_m"}) {
    add_linear(v, cle + ".point_embed", 3, cfg.c);
    for (std::size_t i = 0; i < cfg.n; ++i) add_linear(v, cle + ".region_proj." + std::to_string(i), g * cfg.c, cfg.c);
    add_linear(v, cle + ".global.0", 3 * cfg.m, cfg.c);
    add_linear(v, cle + ".global.1", cfg.c, cfg.c);
  }
  for (std::size_t i = 0; i < 4; ++i)
    add_conv(v, "cse.conv." + std::to_string(i), kCseChannels[i], kCseChannels[i + 1], kCseKernel);
  add_linear(v, "cse.proj", kCseChannels.back(), cfg.c);
  for (std::size_t k = 0; k < 6; ++k) {
    add_linear(v, "mpe.embed." + std::to_string(k), 1, cfg.c);
    add_linear(v, "mpe.proj." + std::to_string(k), cfg.c, cfg.y * cfg.c);
  }
  for (const char* p : {"pos.x", "pos.y", "pos.z", "pos.za"}) v.push_back({p, {cfg.n, cfg.c}, Slot::Position});
  for (std::size_t i = 0; i < cfg.s_a; ++i) add_block(v, "dp_a." + std::to_string(i), 2 * cfg.c, cfg);
  for (std::size_t i = 0; i < cfg.s_b; ++i) add_block(v, "dp_b." + std::to_string(i), cfg.c, cfg);
  for (const std::string cld : {"cld_a", "cld_b"}) {
    for (std::size_t i = 0; i < cfg.n; ++i) add_linear(v, cld + ".region_proj." + std::to_string(i), cfg.c, g * cfg.c);
    add_linear(v, cld + ".deembed", cfg.c, 3);
  }
  add_linear(v, "csd.proj", cfg.c, kCsdChannels.front() * (cfg.h / 16) * (cfg.w / 16));
  for (std::size_t i = 0; i < 4; ++i)
    add_conv(v, "csd.conv." + std::to_string(i), kCsdChannels[i], kCsdChannels[i + 1], kCsdKernel);
  return v;
}

std::string idx(std::string_view prefix, std::string_view part, std::size_t i) {
  return std::string(prefix) + "." + std::string(part) + "." + std::to_string(i);
}

template <typename T>
Var<T> lin(Binder<T>& b, const std::string& p, Var<T> x) {
  return ad::linear(x, b(p + ".weight"), b(p + ".bias"));
}

template <typename T>
Var<T> block(Binder<T>& b, const ModelConfig& cfg, const std::string& p, Var<T> q_in, Var<T> z,
             std::vector<Var<T>>& attention) {
  const Var<T> q = lin(b, p + ".q", q_in);
  const Var<T> k = lin(b, p + ".k", z);
  const Var<T> v = lin(b, p + ".v", z);
  const T inv_sqrt_c = T(1) / std::sqrt(static_cast<T>(cfg.c));
  const Var<T> att = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_c));
  attention.push_back(att);
  const T eps = static_cast<T>(cfg.eps);
  const Var<T> z1 = ad::layernorm(ad::add(z, ad::matmul(att, v)), b(p + ".ln1.gain"), b(p + ".ln1.bias"), eps);
  const Var<T> f = lin(b, p + ".ffn.1", ad::gelu(lin(b, p + ".ffn.0", z1)));
  return ad::layernorm(ad::add(z1, f), b(p + ".ln2.gain"), b(p + ".ln2.bias"), eps);
}

}  // namespace

template <typename T>
Tensor<T> line_tensor(const geom::CharLine& line) {
  Tensor<T> t({line.size(), 3});
  for (std::size_t i = 0; i < line.size(); ++i) {
    t.data[3 * i] = static_cast<T>(line[i].x);
    t.data[3 * i + 1] = static_cast<T>(line[i].y);
    t.data[3 * i + 2] = static_cast<T>(line[i].z);
  }
  return t;
}

namespace {

void check_sample(const oracle::Sample& s, const ModelConfig& cfg) {
  if (s.workpiece.size() != cfg.m)
    throw DataError("sample has M=" + std::to_string(s.workpiece.size()) + " but the model expects M=" +
                    std::to_string(cfg.m));
  if (s.sdf.h != cfg.h || s.sdf.w != cfg.w)
    throw DataError("sample SDF is " + std::to_string(s.sdf.h) + "x" + std::to_string(s.sdf.w) +
                    " but the model expects " + std::to_string(cfg.h) + "x" + std::to_string(cfg.w));
}

template <typename T>
Tensor<T> sdf_tensor(const section::SdfGrid& g) {
  Tensor<T> t({1, g.h, g.w});
  for (std::size_t i = 0; i < g.values.size(); ++i) t.data[i] = static_cast<T>(g.values[i]);
  return t;
}

}  // namespace

template <typename T>
Inputs<T> make_inputs(const oracle::Sample& s, const ModelConfig& cfg) {
  check_sample(s, cfg);
  Inputs<T> in;
  in.workpiece = line_tensor<T>(s.workpiece);
  in.mold = line_tensor<T>(s.mold);
  in.motion = Tensor<T>({6});
  for (std::size_t k = 0; k < 6; ++k) in.motion.data[k] = static_cast<T>(s.motion[k]);
  in.sdf = sdf_tensor<T>(s.sdf);
  return in;
}

template <typename T>
Targets<T> make_targets(const oracle::Sample& s, const ModelConfig& cfg) {
  check_sample(s, cfg);
  return {line_tensor<T>(s.loaded_line), line_tensor<T>(s.final_line), sdf_tensor<T>(s.sdf)};
}

InputNorm fit_input_norm(std::span<const oracle::Sample> samples, const ModelConfig& cfg) {
  if (samples.empty()) throw DataError("cannot fit input normalization on an empty split");
  const std::size_t k = 3 * cfg.m;
  const double count = static_cast<double>(samples.size());
  InputNorm nm;
  nm.mold_mean.assign(k, 0.0);
  nm.workpiece_mean.assign(k, 0.0);
  std::vector<Tensor<double>> molds, workpieces;
  for (const auto& s : samples) {
    auto in = make_inputs<double>(s, cfg);
    molds.push_back(std::move(in.mold));
    workpieces.push_back(std::move(in.workpiece));
    for (std::size_t j = 0; j < k; ++j) {
      nm.mold_mean[j] += molds.back().data[j] / count;
      nm.workpiece_mean[j] += workpieces.back().data[j] / count;
    }
    for (std::size_t j = 0; j < 6; ++j) nm.motion_mean[j] += s.motion[j] / count;
  }
  auto axis_scale = [&](const std::vector<Tensor<double>>& lines, const std::vector<double>& mean) {
    std::array<double, 3> sq{};
    for (const auto& t : lines)
      for (std::size_t j = 0; j < k; ++j) sq[j % 3] += (t.data[j] - mean[j]) * (t.data[j] - mean[j]);
    for (double& v : sq) v = std::max(std::sqrt(v / (count * static_cast<double>(cfg.m))), 1.0);
    return sq;
  };
  nm.mold_scale = axis_scale(molds, nm.mold_mean);
  nm.workpiece_scale = axis_scale(workpieces, nm.workpiece_mean);
  for (std::size_t j = 0; j < 6; ++j) {
    double sq = 0.0;
    for (const auto& s : samples) sq += (s.motion[j] - nm.motion_mean[j]) * (s.motion[j] - nm.motion_mean[j]);
    nm.motion_scale[j] = std::max(std::sqrt(sq / count), j < 3 ? 1.0 : 1e-3);
  }
  return nm;
}

template <typename T>
ad::ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ad::ParamSet<T> ps;
  for (const Slot& s : layout(cfg)) {
    Tensor<double> t(s.shape);
    switch (s.init) {
      case Slot::Xavier: {
        const double a = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
        for (double& v : t.data) v = rng.uniform(-a, a);
        break;
      }
      case Slot::Zero:
        break;
      case Slot::One:
        for (double& v : t.data) v = 1.0;
        break;
      case Slot::Position:
        for (double& v : t.data) v = 0.02 * rng.normal();
        break;
    }
    ps.add(s.name, ad::cast<T>(t));
  }
  return ps;
}

template <typename T>
Var<T> Binder<T>::operator()(const std::string& name) {
  const auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Var<T> v = tape_.param(params_, name);
  bound_.emplace(name, v);
  return v;
}

template <typename T>
Var<T> cle_encode(Binder<T>& b, const ModelConfig& cfg, std::string_view prefix, Var<T> line) {
  if (line.shape() != Shape{cfg.m, 3})
    throw NumericError("cle_encode: line is " + ad::shape_str(line.shape()) + ", expected [" + std::to_string(cfg.m) + "x3]");
  const std::string p(prefix);
  const std::size_t g = cfg.points_per_token();
  const Var<T> emb = lin(b, p + ".point_embed", line);
  std::vector<Var<T>> regions;
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const Var<T> flat = ad::reshape(ad::slice_rows(emb, i * g, g), {1, g * cfg.c});
    regions.push_back(lin(b, idx(p, "region_proj", i), flat));
  }
  const Var<T> local = ad::concat_rows(regions);
  const Var<T> global =
      lin(b, p + ".global.1", ad::gelu(lin(b, p + ".global.0", ad::reshape(line, {1, 3 * cfg.m}))));
  return ad::add(local, ad::repeat_rows(global, cfg.n));
}

template <typename T>
Var<T> cse_encode(Binder<T>& b, const ModelConfig& cfg, Var<T> sdf) {
  if (ad::shape_size(sdf.shape()) != cfg.h * cfg.w)
    throw NumericError("cse_encode: grid is " + ad::shape_str(sdf.shape()) + ", expected " + std::to_string(cfg.h) +
                       "x" + std::to_string(cfg.w));
  Var<T> x = ad::reshape(sdf, {1, cfg.h, cfg.w});
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string p = "cse.conv." + std::to_string(i);
    x = ad::gelu(ad::conv2d(x, b(p + ".weight"), b(p + ".bias"), 2, 1));
  }
  const std::size_t ch = kCseChannels.back();
  const Var<T> pooled = ad::reshape(ad::row_means(ad::reshape(x, {ch, ad::shape_size(x.shape()) / ch})), {1, ch});
  return lin(b, "cse.proj", pooled);
}

template <typename T>
Var<T> off_fuse(Var<T> x_w, Var<T> s_w) {
  if (x_w.shape().size() != 2 || s_w.shape() != Shape{1, x_w.shape()[1]})
    throw NumericError("off_fuse: cannot fuse " + ad::shape_str(s_w.shape()) + " into " + ad::shape_str(x_w.shape()));
  return ad::add(x_w, ad::repeat_rows(s_w, x_w.shape()[0]));
}

template <typename T>
Var<T> mpe_encode(Binder<T>& b, const ModelConfig& cfg, Var<T> motion) {
  if (ad::shape_size(motion.shape()) != 6) throw NumericError("mpe_encode: expected 6 motion values");
  const Var<T> column = ad::reshape(motion, {6, 1});
  std::vector<Var<T>> blocks;
  for (std::size_t k = 0; k < 6; ++k) {
    const Var<T> e = ad::gelu(lin(b, idx("mpe", "embed", k), ad::slice_rows(column, k, 1)));
    blocks.push_back(ad::reshape(lin(b, idx("mpe", "proj", k), e), {cfg.y, cfg.c}));
  }
  return ad::concat_rows(blocks);
}

template <typename T>
StageResult<T> dp_loading(Binder<T>& b, const ModelConfig& cfg, Var<T> x, Var<T> y, Var<T> z) {
  const Shape tokens{cfg.n, cfg.c};
  if (x.shape() != tokens || y.shape() != tokens || z.shape() != tokens)
    throw NumericError("dp_loading: token sequences must be " + ad::shape_str(tokens));
  const Var<T> xy = ad::concat_cols(ad::add(x, b("pos.x")), ad::add(y, b("pos.y")));
  StageResult<T> r;
  r.tokens = ad::add(z, b("pos.z"));
  for (std::size_t i = 0; i < cfg.s_a; ++i) r.tokens = block(b, cfg, "dp_a." + std::to_string(i), xy, r.tokens, r.attention);
  return r;
}

template <typename T>
StageResult<T> dp_unloading(Binder<T>& b, const ModelConfig& cfg, Var<T> z_a) {
  if (z_a.shape() != Shape{cfg.n, cfg.c}) throw NumericError("dp_unloading: unexpected token shape " + ad::shape_str(z_a.shape()));
  StageResult<T> r;
  r.tokens = ad::add(ad::detach(z_a), b("pos.za"));
  for (std::size_t i = 0; i < cfg.s_b; ++i)
    r.tokens = block(b, cfg, "dp_b." + std::to_string(i), r.tokens, r.tokens, r.attention);
  return r;
}

template <typename T>
Var<T> cld_decode(Binder<T>& b, const ModelConfig& cfg, std::string_view prefix, Var<T> tokens) {
  if (tokens.shape() != Shape{cfg.n, cfg.c}) throw NumericError("cld_decode: unexpected token shape " + ad::shape_str(tokens.shape()));
  const std::string p(prefix);
  const std::size_t g = cfg.points_per_token();
  std::vector<Var<T>> groups;
  for (std::size_t i = 0; i < cfg.n; ++i)
    groups.push_back(ad::reshape(lin(b, idx(p, "region_proj", i), ad::slice_rows(tokens, i, 1)), {g, cfg.c}));
  return lin(b, p + ".deembed", ad::concat_rows(groups));
}

template <typename T>
Var<T> csd_decode(Binder<T>& b, const ModelConfig& cfg, Var<T> s_w) {
  if (s_w.shape() != Shape{1, cfg.c}) throw NumericError("csd_decode: unexpected feature shape " + ad::shape_str(s_w.shape()));
  Var<T> x = ad::reshape(lin(b, "csd.proj", s_w), {kCsdChannels.front(), cfg.h / 16, cfg.w / 16});
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string p = "csd.conv." + std::to_string(i);
    x = ad::conv2d(ad::upsample_nearest(x, 2), b(p + ".weight"), b(p + ".bias"), 1, 1);
    if (i < 3) x = ad::gelu(x);
  }
  return x;
}

template <typename T>
Var<T> loss_r(Var<T> sdf_target, Var<T> s_r) {
  const Var<T> d = ad::sub(s_r, sdf_target);
  return ad::mean(ad::mul(d, d));
}

template <typename T>
Var<T> loss_p(Var<T> pred, Var<T> gt, const std::array<double, 3>& lambda) {
  if (pred.shape() != gt.shape() || pred.shape().size() != 2 || pred.shape()[1] != 3)
    throw NumericError("loss_p: shapes " + ad::shape_str(pred.shape()) + " and " + ad::shape_str(gt.shape()));
  const Var<T> d = ad::sub(pred, gt);
  Var<T> total = pred.tape()->constant(Tensor<T>({1}));
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(lambda[a] >= 0.0)) throw NumericError("loss_p: lambda must be >= 0");
    if (lambda[a] == 0.0) continue;
    total = ad::add(total, ad::scale(ad::l2norm(ad::column(d, a)), static_cast<T>(lambda[a])));
  }
  return total;
}

template <typename T>
Outputs<T> forward_full(Binder<T>& b, const ModelConfig& cfg, const Inputs<T>& in) {
  ad::Tape<T>& tape = b.tape();
  const InputNorm& nm = cfg.input_norm;
  const T inv = static_cast<T>(1.0 / cfg.coord_scale);
  auto line = [&](Tensor<T> t, const std::vector<double>& mean, const std::array<double, 3>& scale) {
    for (std::size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = nm.empty() ? t.data[i] * inv : static_cast<T>((t.data[i] - mean[i]) / scale[i % 3]);
    return tape.constant(std::move(t));
  };
  Tensor<T> dof = in.motion;
  for (std::size_t i = 0; i < 6; ++i)
    if (!nm.empty())
      dof.data[i] = static_cast<T>((dof.data[i] - nm.motion_mean[i]) / nm.motion_scale[i]);
    else if (i < 3)  // displacements only; rotations stay in radians
      dof.data[i] *= inv;
  const Var<T> mold = line(in.mold, nm.mold_mean, nm.mold_scale);
  const Var<T> workpiece = line(in.workpiece, nm.workpiece_mean, nm.workpiece_scale);
  const Var<T> motion = tape.constant(std::move(dof));
  const Var<T> sdf = tape.constant(in.sdf);

  const Var<T> x = cle_encode(b, cfg, "cle_m", mold);
  const Var<T> y = mpe_encode(b, cfg, motion);
  const Var<T> x_w = cle_encode(b, cfg, "cle_w", workpiece);
  const Var<T> s_w = cse_encode(b, cfg, sdf);
  // The section feature reaches the line branch detached, so loss_r alone
  // drives the section encoder.
  const Var<T> z = off_fuse(x_w, ad::detach(s_w));

  Outputs<T> out;
  StageResult<T> a = dp_loading(b, cfg, x, y, z);
  out.p_a = ad::scale(cld_decode(b, cfg, "cld_a", a.tokens), static_cast<T>(cfg.coord_scale));
  StageResult<T> u = dp_unloading(b, cfg, a.tokens);
  out.p_b = ad::scale(cld_decode(b, cfg, "cld_b", u.tokens), static_cast<T>(cfg.coord_scale));
  out.s_r = csd_decode(b, cfg, s_w);
  out.attn_a = std::move(a.attention);
  out.attn_b = std::move(u.attention);
  return out;
}

template <typename T>
Losses<T> sample_losses(const Outputs<T>& out, const Targets<T>& tgt, const std::array<double, 3>& lambda) {
  ad::Tape<T>& tape = *out.p_a.tape();
  Losses<T> l;
  l.r = loss_r(tape.constant(tgt.sdf), out.s_r);
  l.p_a = loss_p(out.p_a, tape.constant(tgt.loaded), lambda);
  l.p_b = loss_p(out.p_b, tape.constant(tgt.final), lambda);
  return l;
}

char param_group(std::string_view name) {
  auto starts = [&](std::string_view p) { return name.substr(0, p.size()) == p; };
  if (starts("cse.") || starts("csd.")) return 'R';
  if (name == "pos.za" || starts("dp_b.") || starts("cld_b.")) return 'B';
  if (starts("cle_w.") || starts("cle_m.") || starts("mpe.") || name == "pos.x" || name == "pos.y" ||
      name == "pos.z" || starts("dp_a.") || starts("cld_a."))
    return 'A';
  throw NumericError("parameter " + std::string(name) + " belongs to no optimizer group");
}

// ---- checkpoints ----

namespace {

void write_config(bin::Writer& w, const ModelConfig& c) {
  const std::array<std::size_t, 10> sizes{c.m, c.n, c.c, c.y, c.s_a, c.s_b, c.h, c.w, c.ffn_hidden, c.heads};
  w.u32(static_cast<std::uint32_t>(sizes.size()));
  for (std::size_t v : sizes) w.u32(static_cast<std::uint32_t>(v));
  w.f64(c.eps);
  w.f64(c.coord_scale);
  const InputNorm& nm = c.input_norm;
  w.u32(static_cast<std::uint32_t>(nm.mold_mean.size()));
  if (nm.empty()) return;
  for (const auto* v : {&nm.mold_mean, &nm.workpiece_mean})
    for (double x : *v) w.f64(x);
  for (const auto* v : {&nm.mold_scale, &nm.workpiece_scale})
    for (double x : *v) w.f64(x);
  for (const auto* v : {&nm.motion_mean, &nm.motion_scale})
    for (double x : *v) w.f64(x);
}

[[noreturn]] void ck_fail(CheckpointError::Kind k, const std::filesystem::path& p, const std::string& msg) {
  throw CheckpointError(k, p.string() + ": " + msg);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ad::ParamSet<float>& params) {
  bin::Writer w;
  w.bytes("LDCK", 4);
  w.u32(kCheckpointVersion);
  write_config(w, cfg);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value.data) w.f32(v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  using Kind = CheckpointError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  bin::Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));

  char magic[4] = {};
  if (!r.bytes(magic, 4)) ck_fail(Kind::Truncated, path, "truncated header");
  if (std::string_view(magic, 4) != "LDCK") ck_fail(Kind::BadMagic, path, "not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  if (!r.u32(version)) ck_fail(Kind::Truncated, path, "truncated header");
  if (version != kCheckpointVersion)
    ck_fail(Kind::BadVersion, path, "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  std::uint32_t nsizes = 0;
  if (!r.u32(nsizes)) ck_fail(Kind::Truncated, path, "truncated config");
  if (nsizes != 10) ck_fail(Kind::ConfigMismatch, path, "unexpected config block size " + std::to_string(nsizes));
  std::array<std::uint32_t, 10> sizes{};
  for (auto& v : sizes)
    if (!r.u32(v)) ck_fail(Kind::Truncated, path, "truncated config");
  ModelConfig& c = ck.config;
  c.m = sizes[0], c.n = sizes[1], c.c = sizes[2], c.y = sizes[3], c.s_a = sizes[4];
  c.s_b = sizes[5], c.h = sizes[6], c.w = sizes[7], c.ffn_hidden = sizes[8], c.heads = sizes[9];
  if (!r.f64(c.eps) || !r.f64(c.coord_scale)) ck_fail(Kind::Truncated, path, "truncated config");
  std::uint32_t norm_size = 0;
  if (!r.u32(norm_size)) ck_fail(Kind::Truncated, path, "truncated config");
  if (norm_size != 0) {
    if (norm_size != 3 * c.m) ck_fail(Kind::ConfigMismatch, path, "input normalization does not match M");
    InputNorm& nm = c.input_norm;
    bool ok = r.remaining() / 8 >= 2 * norm_size + 18;
    for (auto* v : {&nm.mold_mean, &nm.workpiece_mean}) {
      v->resize(norm_size);
      for (double& x : *v) ok = ok && r.f64(x);
    }
    for (auto* v : {&nm.mold_scale, &nm.workpiece_scale})
      for (double& x : *v) ok = ok && r.f64(x);
    for (auto* v : {&nm.motion_mean, &nm.motion_scale})
      for (double& x : *v) ok = ok && r.f64(x);
    if (!ok) ck_fail(Kind::Truncated, path, "truncated config");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    ck_fail(Kind::ConfigMismatch, path, e.what());
  }
  if (expected && !(*expected == c))
    ck_fail(Kind::ConfigMismatch, path, "checkpoint config differs from the requested model config");

  std::map<std::string, Shape> want;
  for (const Slot& s : layout(c)) want.emplace(s.name, s.shape);
  std::uint32_t count = 0;
  if (!r.u32(count)) ck_fail(Kind::Truncated, path, "truncated parameter table");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    std::uint32_t rank = 0;
    if (!r.str(name) || !r.u32(rank) || rank > 8) ck_fail(Kind::Truncated, path, "truncated parameter table");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!r.u32(v)) ck_fail(Kind::Truncated, path, "truncated shape of " + name);
      d = v;
    }
    const auto it = want.find(name);
    if (it == want.end()) ck_fail(Kind::ShapeMismatch, path, "unexpected parameter " + name);
    if (it->second != shape)
      ck_fail(Kind::ShapeMismatch, path,
              "parameter " + name + " has shape " + ad::shape_str(shape) + ", expected " + ad::shape_str(it->second));
    if (ck.params.contains(name)) ck_fail(Kind::ShapeMismatch, path, "duplicate parameter " + name);
    Tensor<float> t(shape);
    if (r.remaining() / 4 < t.size()) ck_fail(Kind::Truncated, path, "truncated values of " + name);
    for (float& v : t.data) r.f32(v);
    ck.params.add(name, std::move(t));
  }
  for (const auto& [name, shape] : want)
    if (!ck.params.contains(name)) ck_fail(Kind::MissingParameter, path, "missing parameter " + name);
  return ck;
}

#define LADEEP_MODEL_INSTANTIATE(T)                                                                       \
  template Tensor<T> line_tensor<T>(const geom::CharLine&);                                               \
  template Inputs<T> make_inputs<T>(const oracle::Sample&, const ModelConfig&);                           \
  template Targets<T> make_targets<T>(const oracle::Sample&, const ModelConfig&);                         \
  template ad::ParamSet<T> init_params<T>(const ModelConfig&, std::uint64_t);                             \
  template class Binder<T>;                                                                               \
  template Var<T> cle_encode(Binder<T>&, const ModelConfig&, std::string_view, Var<T>);                   \
  template Var<T> cse_encode(Binder<T>&, const ModelConfig&, Var<T>);                                     \
  template Var<T> off_fuse(Var<T>, Var<T>);                                                               \
  template Var<T> mpe_encode(Binder<T>&, const ModelConfig&, Var<T>);                                     \
  template StageResult<T> dp_loading(Binder<T>&, const ModelConfig&, Var<T>, Var<T>, Var<T>);             \
  template StageResult<T> dp_unloading(Binder<T>&, const ModelConfig&, Var<T>);                           \
  template Var<T> cld_decode(Binder<T>&, const ModelConfig&, std::string_view, Var<T>);                   \
  template Var<T> csd_decode(Binder<T>&, const ModelConfig&, Var<T>);                                     \
  template Var<T> loss_r(Var<T>, Var<T>);                                                                 \
  template Var<T> loss_p(Var<T>, Var<T>, const std::array<double, 3>&);                                   \
  template Outputs<T> forward_full(Binder<T>&, const ModelConfig&, const Inputs<T>&);                     \
  template Losses<T> sample_losses(const Outputs<T>&, const Targets<T>&, const std::array<double, 3>&);

LADEEP_MODEL_INSTANTIATE(float)
LADEEP_MODEL_INSTANTIATE(double)

}  // namespace ladeep::model
