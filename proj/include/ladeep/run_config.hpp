#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ladeep/model.hpp"
#include "ladeep/train.hpp"

namespace ladeep {

/// Everything a run needs besides its inputs and outputs. Text form is one
/// key=value per line with '#' comments; keys are the field names below,
/// model fields included (m, n, c, y, s_a, s_b, h, w, ffn_hidden, heads,
/// eps, coord_scale).
struct RunConfig {
  model::ModelConfig model;
  std::filesystem::path data;
  std::uint64_t seed = 0;
  std::size_t epochs = 600;
  double lr = 1e-3;
  std::size_t batch = 8;
  double metric_pitch = 1.0;  // mm
  double design_tol = 0.5;    // mm
  std::size_t design_max_iter = 20;
  double design_alpha = 0.8;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  train::TrainOptions train_options() const;
};

/// Unknown or repeated keys and malformed values throw ConfigError with the
/// line number. Does not validate.
RunConfig parse_run_config(std::string_view text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ladeep
