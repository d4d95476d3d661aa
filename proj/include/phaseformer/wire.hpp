#pragma once

// Little-endian byte packing for the on-disk containers. Explicit per-byte
// moves keep the files identical across platforms regardless of host
// endianness.

#include <bit>
#include <cstdint>
#include <string>

#include "phaseformer/error.hpp"

namespace phaseformer::wire {

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<uint32_t>(v)); }
inline void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes)
      : p_(reinterpret_cast<const unsigned char*>(bytes.data())), left_(bytes.size()) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[i]) << (8 * i);
    skip(4);
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[i]) << (8 * i);
    skip(8);
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    skip(n);
    return s;
  }

  size_t left() const { return left_; }
  bool done() const { return left_ == 0; }

 private:
  void need(size_t n) const {
    if (left_ < n) fail(ErrorKind::format, "file truncated");
  }
  void skip(size_t n) {
    p_ += n;
    left_ -= n;
  }

  const unsigned char* p_;
  size_t left_;
};

}  // namespace phaseformer::wire
