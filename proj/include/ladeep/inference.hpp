#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "ladeep/metrics.hpp"
#include "ladeep/model.hpp"
#include "ladeep/oracle.hpp"

namespace ladeep::infer {

struct Prediction {
  geom::CharLine loaded;  // p^a, mm
  geom::CharLine final;   // p^b, mm
  ad::Tensor<float> sdf;  // reconstructed section, 1 x H x W
  std::vector<ad::Tensor<float>> attn_a, attn_b;
};

Prediction predict(const model::Checkpoint& ck, const model::Inputs<float>& in);
Prediction predict(const model::Checkpoint& ck, const oracle::Sample& s);

/// Per-sample metrics of the predicted final line against the ground truth,
/// evaluated in parallel and reported in split order.
metrics::MetricsReport evaluate(const model::Checkpoint& ck, const std::filesystem::path& data_dir, oracle::Split split,
                                double pitch = 1.0);

/// attn_a_<i>.csv/.pgm for each loading layer and attn_b_<i>.csv/.pgm for
/// each unloading layer. Returns the written paths.
std::vector<std::filesystem::path> export_attention(const model::Checkpoint& ck, const oracle::Sample& s,
                                                    const std::filesystem::path& out_dir);

/// x,y,z rows with a header line.
void write_line_csv(const geom::CharLine& line, const std::filesystem::path& path);
/// Accepts an optional header and commas or whitespace between values.
geom::CharLine read_line_csv(const std::filesystem::path& path);

}  // namespace ladeep::infer
