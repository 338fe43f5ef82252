#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ladeep/model.hpp"
#include "ladeep/oracle.hpp"

namespace ladeep::train {

using ad::ParamSet;

/// (lambda_x, lambda_y, lambda_z) from per-axis ranges. Axes with a range
/// below 1e-6 get zero weight; the rest are normalized to sum to one.
std::array<double, 3> lambda_from_ranges(const std::array<double, 3>& ranges);

/// Ranges of the final-line coordinates over the given samples.
std::array<double, 3> lambda_weights(std::span<const oracle::Sample> samples);

/// Adam over a subset of a parameter set.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::size_t> indices;  // positions in the ParamSet
  std::vector<ad::Tensor<float>> m, v;
};

AdamState make_adam(const ParamSet<float>& params, std::vector<std::size_t> indices, double lr);

/// One bias-corrected update of the owned parameters. With `check_finite`
/// a non-finite gradient throws NumericError naming the parameter.
void adam_step(AdamState& state, ParamSet<float>& params, const ad::Grads<float>& grads, bool check_finite = false);

/// Loss indices in logs and switches.
enum LossId : std::size_t { kLossR = 0, kLossPA = 1, kLossPB = 2 };

struct TrainOptions {
  std::size_t epochs = 600;
  double lr = 1e-3;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  std::array<bool, 3> enabled{true, true, true};  // a disabled loss sends no gradient
  std::size_t max_steps = 0;                        // stop after this many steps in total; 0 = no limit
  bool check_finite = false;
};

/// Samples converted once to network tensors.
struct TrainData {
  std::vector<model::Inputs<float>> inputs;
  std::vector<model::Targets<float>> targets;

  std::size_t size() const { return inputs.size(); }
};

TrainData prepare(std::span<const oracle::Sample> samples, const model::ModelConfig& cfg);

struct TrainState {
  ParamSet<float> params;
  std::array<AdamState, 3> adam;  // groups R, A, B
  std::array<double, 3> lambda{};
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
};

/// Fresh parameters from `opts.seed` and one Adam state per optimizer group.
TrainState init_state(const model::ModelConfig& cfg, const TrainOptions& opts, const std::array<double, 3>& lambda);

/// Sample order of one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct StepLosses {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  std::array<double, 3> loss{};  // batch means of loss_r, loss_p_a, loss_p_b
};

/// Forward and backward over the batch, then one Adam step per group.
StepLosses train_step(const model::ModelConfig& cfg, TrainState& state, const TrainData& data,
                      std::span<const std::size_t> batch, const TrainOptions& opts);

/// Runs epochs state.epoch+1 .. opts.epochs. `on_step` sees every step and
/// `on_epoch` is called after each completed epoch.
void run(const model::ModelConfig& cfg, TrainState& state, const TrainData& data, const TrainOptions& opts,
         const std::function<void(const StepLosses&)>& on_step = {},
         const std::function<void(const TrainState&)>& on_epoch = {});

/// Optimizer state beside a checkpoint: "<checkpoint>.adam".
std::filesystem::path adam_path(const std::filesystem::path& checkpoint);
void save_state(const std::filesystem::path& checkpoint, const model::ModelConfig& cfg, const TrainState& state);
TrainState load_state(const std::filesystem::path& checkpoint, const model::ModelConfig& cfg);

/// Reads the train split of a dataset directory and checks it against cfg.
std::vector<oracle::Sample> load_split(const std::filesystem::path& data_dir, oracle::Split split,
                                       const model::ModelConfig& cfg, std::vector<std::size_t>* ids = nullptr);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<StepLosses> steps;  // steps run in this call
};

/// Trains on the train split of `data_dir`, writing model.ldck (with its
/// optimizer state) after every epoch and appending to loss_log.csv in
/// `out_dir`. With `resume` the run continues from the files in `out_dir`.
/// An empty cfg.input_norm is fitted on the train split and saved with the
/// checkpoint.
TrainResult train(const model::ModelConfig& cfg, const TrainOptions& opts, const std::filesystem::path& data_dir,
                  const std::filesystem::path& out_dir, bool resume = false);

}  // namespace ladeep::train
