#pragma once

#include <filesystem>
#include <string>

#include "ladeep/errors.hpp"
#include "ladeep/oracle.hpp"

namespace ladeep::io {

// Sample file layout, all little-endian:
//   "LDEP", u32 version = 1, u32 type_id,
//   u32 n + n f32 section params,
//   u32 K + 2K f32 contour vertices,
//   u32 h, u32 w, f32 pitch, f32 origin x, f32 origin y, h*w f32 SDF (row-major),
//   u32 M, 4 * M*3 f32 lines (workpiece, mold, loaded, final),
//   6 f32 motion, f32 eta.
inline constexpr char kSampleMagic[4] = {'L', 'D', 'E', 'P'};
inline constexpr std::uint32_t kSampleVersion = 1;

class SampleFormatError : public DataError {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, Invalid };
  SampleFormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

void write_sample(const oracle::Sample& s, const std::filesystem::path& path);
oracle::Sample read_sample(const std::filesystem::path& path);

}  // namespace ladeep::io
