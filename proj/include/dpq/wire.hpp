#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

/// Little-endian primitives shared by the binary file formats.
namespace dpq::wire {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16),
                             std::uint8_t(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  std::uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(std::string("truncated ") + what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = std::uint8_t(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in, const char* what) {
  std::uint8_t b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error(std::string("truncated ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline void put_u16(std::ostream& out, std::uint16_t v) {
  const std::uint8_t b[2] = {std::uint8_t(v), std::uint8_t(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint16_t get_u16(std::istream& in, const char* what) {
  std::uint8_t b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2))
    throw std::runtime_error(std::string("truncated ") + what);
  return std::uint16_t(b[0] | b[1] << 8);
}

inline void put_f32(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

inline double get_f32(std::istream& in, const char* what) {
  const std::uint32_t bits = get_u32(in, what);
  float f;
  std::memcpy(&f, &bits, 4);
  return double(f);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline double get_f64(std::istream& in, const char* what) {
  const std::uint64_t bits = get_u64(in, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace dpq::wire
