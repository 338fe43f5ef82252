#include "ladeep/sample_io.hpp"

#include <fstream>
#include <iterator>

#include "ladeep/binary.hpp"

namespace ladeep::io {

using oracle::Sample;

namespace {

using Kind = SampleFormatError::Kind;

void put_line(bin::Writer& w, const geom::CharLine& line) {
  for (const auto& p : line.points()) {
    w.f32(p.x);
    w.f32(p.y);
    w.f32(p.z);
  }
}

[[noreturn]] void truncated(const std::filesystem::path& path, const char* section) {
  throw SampleFormatError(Kind::Truncated, path.string() + ": file truncated in section '" + section + "'");
}

geom::CharLine get_line(bin::Reader& r, std::uint32_t m, const std::filesystem::path& path, const char* section) {
  std::vector<geom::Point3> pts(m);
  for (auto& p : pts)
    if (!r.f32(p.x) || !r.f32(p.y) || !r.f32(p.z)) truncated(path, section);
  try {
    return geom::CharLine(std::move(pts));
  } catch (const GeometryError& e) {
    throw SampleFormatError(Kind::Invalid, path.string() + ": invalid " + section + ": " + e.what());
  }
}

}  // namespace

void write_sample(const Sample& s, const std::filesystem::path& path) {
  bin::Writer w;
  w.bytes(kSampleMagic, 4);
  w.u32(kSampleVersion);
  w.u32(static_cast<std::uint32_t>(s.section.type_id));
  w.u32(static_cast<std::uint32_t>(s.section.values.size()));
  for (double v : s.section.values) w.f32(v);
  w.u32(static_cast<std::uint32_t>(s.contour.vertices.size()));
  for (const auto& v : s.contour.vertices) {
    w.f32(v.x);
    w.f32(v.y);
  }
  w.u32(static_cast<std::uint32_t>(s.sdf.h));
  w.u32(static_cast<std::uint32_t>(s.sdf.w));
  w.f32(s.sdf.pitch);
  w.f32(s.sdf.origin.x);
  w.f32(s.sdf.origin.y);
  for (double v : s.sdf.values) w.f32(v);
  w.u32(static_cast<std::uint32_t>(s.workpiece.size()));
  for (const auto* line : {&s.workpiece, &s.mold, &s.loaded_line, &s.final_line}) {
    if (line->size() != s.workpiece.size()) throw DataError("sample lines differ in point count");
    put_line(w, *line);
  }
  for (double v : s.motion.dof) w.f32(v);
  w.f32(s.eta);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Sample read_sample(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sample " + path.string());
  bin::Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));

  char magic[4];
  if (!r.bytes(magic, 4)) truncated(path, "header");
  if (!std::equal(magic, magic + 4, kSampleMagic))
    throw SampleFormatError(Kind::BadMagic, path.string() + ": not a sample file (bad magic)");
  std::uint32_t version = 0;
  if (!r.u32(version)) truncated(path, "header");
  if (version != kSampleVersion)
    throw SampleFormatError(Kind::BadVersion, path.string() + ": unsupported sample version " + std::to_string(version));

  Sample s;
  std::uint32_t type_id = 0, n = 0;
  if (!r.u32(type_id) || !r.u32(n)) truncated(path, "params");
  s.section.type_id = static_cast<int>(type_id);
  s.section.values.resize(n);
  for (auto& v : s.section.values)
    if (!r.f32(v)) truncated(path, "params");

  std::uint32_t k = 0;
  if (!r.u32(k)) truncated(path, "contour");
  s.contour.vertices.resize(k);
  for (auto& v : s.contour.vertices)
    if (!r.f32(v.x) || !r.f32(v.y)) truncated(path, "contour");

  std::uint32_t h = 0, w = 0;
  if (!r.u32(h) || !r.u32(w) || !r.f32(s.sdf.pitch) || !r.f32(s.sdf.origin.x) || !r.f32(s.sdf.origin.y))
    truncated(path, "grid");
  s.sdf.h = h;
  s.sdf.w = w;
  if (r.remaining() / 4 < static_cast<std::size_t>(h) * w) truncated(path, "grid");
  s.sdf.values.resize(static_cast<std::size_t>(h) * w);
  for (auto& v : s.sdf.values) r.f32(v);

  std::uint32_t m = 0;
  if (!r.u32(m)) truncated(path, "lines");
  if (r.remaining() / 12 < 4ull * m) truncated(path, "lines");
  s.workpiece = get_line(r, m, path, "workpiece line");
  s.mold = get_line(r, m, path, "mold line");
  s.loaded_line = get_line(r, m, path, "loaded line");
  s.final_line = get_line(r, m, path, "final line");

  for (auto& v : s.motion.dof)
    if (!r.f32(v)) truncated(path, "motion");
  if (!r.f32(s.eta)) truncated(path, "eta");

  try {
    section::validate(s.section);
  } catch (const GeometryError& e) {
    throw SampleFormatError(Kind::Invalid, path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace ladeep::io
