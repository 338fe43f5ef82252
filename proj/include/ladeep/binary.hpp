#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace ladeep::bin {

/// Little-endian byte sink.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32(double v) { f32(static_cast<float>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

/// Little-endian byte source. Reads return false when the buffer runs out;
/// callers turn that into a format error naming the section being read.
class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

  bool bytes(void* out, std::size_t n) {
    if (remaining() < n) return false;
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  bool u32(std::uint32_t& v) {
    if (remaining() < 4) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return true;
  }
  bool u64(std::uint64_t& v) {
    std::uint32_t lo = 0, hi = 0;
    if (!u32(lo) || !u32(hi)) return false;
    v = (static_cast<std::uint64_t>(hi) << 32) | lo;
    return true;
  }
  bool f64(double& v) {
    std::uint64_t u = 0;
    if (!u64(u)) return false;
    v = std::bit_cast<double>(u);
    return true;
  }
  bool str(std::string& s, std::size_t max_len = 4096) {
    std::uint32_t n = 0;
    if (!u32(n) || n > max_len || remaining() < n) return false;
    s.assign(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return true;
  }
  bool f32(float& v) {
    std::uint32_t u = 0;
    if (!u32(u)) return false;
    v = std::bit_cast<float>(u);
    return true;
  }
  bool f32(double& v) {
    float f = 0.0f;
    if (!f32(f)) return false;
    v = f;
    return true;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace ladeep::bin
