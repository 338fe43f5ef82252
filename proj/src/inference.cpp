#include "ladeep/inference.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ladeep/parallel.hpp"
#include "ladeep/train.hpp"

namespace ladeep::infer {

namespace fs = std::filesystem;

namespace {

geom::CharLine to_line(const ad::Tensor<float>& t) {
  std::vector<geom::Point3> pts(t.dim(0));
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {t.at(i, 0), t.at(i, 1), t.at(i, 2)};
  return geom::CharLine(std::move(pts));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_matrix_pgm(const ad::Tensor<float>& a, const fs::path& path) {
  const auto [lo, hi] = std::minmax_element(a.data.begin(), a.data.end());
  const double span = static_cast<double>(*hi) - static_cast<double>(*lo);
  std::string out = "P5\n" + std::to_string(a.dim(1)) + " " + std::to_string(a.dim(0)) + "\n255\n";
  for (float v : a.data) {
    const double t = span > 0.0 ? (static_cast<double>(v) - *lo) / span : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
  }
  write_text(path, out);
}

void write_matrix_csv(const ad::Tensor<float>& a, const fs::path& path) {
  std::string out;
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) {
      if (j) out += ',';
      out += fmt(a.at(i, j));
    }
    out += '\n';
  }
  write_text(path, out);
}

}  // namespace

Prediction predict(const model::Checkpoint& ck, const model::Inputs<float>& in) {
  ad::Tape<float> tape;
  model::Binder<float> b(tape, ck.params);
  const auto out = model::forward_full(b, ck.config, in);
  Prediction p;
  p.loaded = to_line(out.p_a.value());
  p.final = to_line(out.p_b.value());
  p.sdf = out.s_r.value();
  for (const auto& a : out.attn_a) p.attn_a.push_back(a.value());
  for (const auto& a : out.attn_b) p.attn_b.push_back(a.value());
  return p;
}

Prediction predict(const model::Checkpoint& ck, const oracle::Sample& s) {
  return predict(ck, model::make_inputs<float>(s, ck.config));
}

metrics::MetricsReport evaluate(const model::Checkpoint& ck, const fs::path& data_dir, oracle::Split split,
                                double pitch) {
  std::vector<std::size_t> ids;
  const auto samples = train::load_split(data_dir, split, ck.config, &ids);
  std::vector<metrics::SampleMetrics> per(samples.size());
  parallel_for(samples.size(), [&](std::size_t k) {
    const auto& s = samples[k];
    const auto pred = predict(ck, s).final;
    per[k] = {ids[k], metrics::mad(pred, s.final_line), metrics::iou3d(pred, s.final_line, s.contour, pitch),
              metrics::te(pred, s.final_line, s.contour)};
  });
  return metrics::summarize(std::move(per));
}

std::vector<fs::path> export_attention(const model::Checkpoint& ck, const oracle::Sample& s, const fs::path& out_dir) {
  const auto p = predict(ck, s);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::vector<ad::Tensor<float>>& maps, const char* stage) {
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const std::string stem = std::string("attn_") + stage + "_" + std::to_string(i);
      write_matrix_csv(maps[i], out_dir / (stem + ".csv"));
      write_matrix_pgm(maps[i], out_dir / (stem + ".pgm"));
      written.push_back(out_dir / (stem + ".csv"));
      written.push_back(out_dir / (stem + ".pgm"));
    }
  };
  emit(p.attn_a, "a");
  emit(p.attn_b, "b");
  return written;
}

void write_line_csv(const geom::CharLine& line, const fs::path& path) {
  std::string out = "x,y,z\n";
  for (const auto& p : line.points()) out += fmt(p.x) + ',' + fmt(p.y) + ',' + fmt(p.z) + '\n';
  write_text(path, out);
}

geom::CharLine read_line_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<geom::Point3> pts;
  std::string row;
  std::size_t lineno = 0;
  while (std::getline(in, row)) {
    ++lineno;
    std::replace(row.begin(), row.end(), ',', ' ');
    if (row.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(row);
    double x, y, z;
    if (!(ss >> x >> y >> z)) {
      if (pts.empty() && lineno == 1) continue;  // header
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected three numbers");
    }
    pts.push_back({x, y, z});
  }
  try {
    return geom::CharLine(std::move(pts));
  } catch (const GeometryError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace ladeep::infer
