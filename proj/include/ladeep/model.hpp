#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ladeep/autodiff.hpp"
#include "ladeep/oracle.hpp"

namespace ladeep::model {

/// Per-input standardization fitted on a training split. Lines are
/// standardized point by point: (p_i - mean_i) / scale[axis]. Empty means
/// lines and motion displacements are only divided by coord_scale.
struct InputNorm {
  std::vector<double> mold_mean, workpiece_mean;  // M x 3, mm
  std::array<double, 3> mold_scale{}, workpiece_scale{};
  std::array<double, 6> motion_mean{}, motion_scale{};

  bool empty() const { return mold_mean.empty(); }
  friend bool operator==(const InputNorm&, const InputNorm&) = default;
};

struct ModelConfig {
  std::size_t m = 240;  // points per line
  std::size_t n = 12;   // tokens
  std::size_t c = 64;   // feature width
  std::size_t y = 2;    // tokens per motion DoF
  std::size_t s_a = 4;  // loading layers
  std::size_t s_b = 4;  // unloading layers
  std::size_t h = 128;  // SDF rows
  std::size_t w = 64;   // SDF cols
  std::size_t ffn_hidden = 0;  // 0 means 2c
  std::size_t heads = 1;
  double eps = 1e-5;
  double coord_scale = 100.0;  // mm per network unit for lines and displacements
  InputNorm input_norm;

  std::size_t ffn() const { return ffn_hidden == 0 ? 2 * c : ffn_hidden; }
  std::size_t points_per_token() const { return m / n; }
  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Network inputs in physical units.
template <typename T>
struct Inputs {
  ad::Tensor<T> workpiece;  // M x 3, mm
  ad::Tensor<T> mold;       // M x 3, mm
  ad::Tensor<T> motion;     // [6]: mm, mm, mm, rad, rad, rad
  ad::Tensor<T> sdf;        // H x W, mm
};

/// Supervision targets of one sample.
template <typename T>
struct Targets {
  ad::Tensor<T> loaded;  // M x 3
  ad::Tensor<T> final;   // M x 3
  ad::Tensor<T> sdf;     // H x W
};

template <typename T>
ad::Tensor<T> line_tensor(const geom::CharLine& line);

/// Throws DataError when the sample does not match the configuration.
template <typename T>
Inputs<T> make_inputs(const oracle::Sample& s, const ModelConfig& cfg);
/// Fits InputNorm on `samples`. Scales are per-axis RMS deviations from the
/// mean line, floored at 1 mm (lines, displacements) or 1e-3 rad.
InputNorm fit_input_norm(std::span<const oracle::Sample> samples, const ModelConfig& cfg);

template <typename T>
Targets<T> make_targets(const oracle::Sample& s, const ModelConfig& cfg);

/// Xavier-uniform weights, zero biases, unit layer-norm gains and
/// N(0, 0.02^2) position embeddings. Values are drawn in double and cast,
/// so both precisions start from the same point.
template <typename T>
ad::ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
ad::ParamSet<To> cast_params(const ad::ParamSet<From>& p) {
  ad::ParamSet<To> out;
  for (std::size_t i = 0; i < p.size(); ++i) out.add(p[i].name, ad::cast<To>(p[i].value));
  return out;
}

/// Binds parameters to a tape on first use.
template <typename T>
class Binder {
 public:
  Binder(ad::Tape<T>& tape, const ad::ParamSet<T>& params) : tape_(tape), params_(params) {}
  ad::Var<T> operator()(const std::string& name);
  ad::Tape<T>& tape() { return tape_; }
  const ad::ParamSet<T>& params() const { return params_; }

 private:
  ad::Tape<T>& tape_;
  const ad::ParamSet<T>& params_;
  std::map<std::string, ad::Var<T>, std::less<>> bound_;
};

// Encoders. Lines enter in network units (already divided by coord_scale).

/// `prefix` is "cle_w" (workpiece) or "cle_m" (mold). line: M x 3 -> N x C.
template <typename T>
ad::Var<T> cle_encode(Binder<T>& b, const ModelConfig& cfg, std::string_view prefix, ad::Var<T> line);
/// sdf: H x W -> 1 x C.
template <typename T>
ad::Var<T> cse_encode(Binder<T>& b, const ModelConfig& cfg, ad::Var<T> sdf);
/// z_w = x_w + s_w repeated over the N rows.
template <typename T>
ad::Var<T> off_fuse(ad::Var<T> x_w, ad::Var<T> s_w);
/// motion: [6] in network units -> N x C, token j belongs to DoF j / Y.
template <typename T>
ad::Var<T> mpe_encode(Binder<T>& b, const ModelConfig& cfg, ad::Var<T> motion);

template <typename T>
struct StageResult {
  ad::Var<T> tokens;
  std::vector<ad::Var<T>> attention;  // one N x N map per layer
};

/// Loading stage: cross attention with queries from [x_0, y_0].
template <typename T>
StageResult<T> dp_loading(Binder<T>& b, const ModelConfig& cfg, ad::Var<T> x, ad::Var<T> y, ad::Var<T> z);
/// Unloading stage: self attention on the (detached) loading result.
template <typename T>
StageResult<T> dp_unloading(Binder<T>& b, const ModelConfig& cfg, ad::Var<T> z_a);

/// `prefix` is "cld_a" or "cld_b". N x C -> M x 3 in network units.
template <typename T>
ad::Var<T> cld_decode(Binder<T>& b, const ModelConfig& cfg, std::string_view prefix, ad::Var<T> tokens);
/// 1 x C -> 1 x H x W.
template <typename T>
ad::Var<T> csd_decode(Binder<T>& b, const ModelConfig& cfg, ad::Var<T> s_w);

template <typename T>
ad::Var<T> loss_r(ad::Var<T> sdf_target, ad::Var<T> s_r);
/// lambda_x |dx| + lambda_y |dy| + lambda_z |dz| over the M-vectors of
/// coordinate differences.
template <typename T>
ad::Var<T> loss_p(ad::Var<T> pred, ad::Var<T> gt, const std::array<double, 3>& lambda);

template <typename T>
struct Outputs {
  ad::Var<T> p_a;  // M x 3, mm
  ad::Var<T> p_b;  // M x 3, mm
  ad::Var<T> s_r;  // 1 x H x W
  std::vector<ad::Var<T>> attn_a, attn_b;
};

template <typename T>
Outputs<T> forward_full(Binder<T>& b, const ModelConfig& cfg, const Inputs<T>& in);

/// The three losses of one sample under a shared tape.
template <typename T>
struct Losses {
  ad::Var<T> r, p_a, p_b;
};

template <typename T>
Losses<T> sample_losses(const Outputs<T>& out, const Targets<T>& tgt, const std::array<double, 3>& lambda);

/// Optimizer group of a parameter name: 'R', 'A' or 'B'.
char param_group(std::string_view name);

// Checkpoints.

class CheckpointError : public DataError {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, ConfigMismatch, ShapeMismatch, MissingParameter };
  CheckpointError(Kind k, const std::string& msg) : DataError(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

constexpr std::uint32_t kCheckpointVersion = 2;

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ad::ParamSet<float>& params);

struct Checkpoint {
  ModelConfig config;
  ad::ParamSet<float> params;
};

/// Loads and checks every parameter against the layout of the stored
/// config; when `expected` is given the stored config must equal it.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace ladeep::model
