#pragma once

// Little-endian encoding helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace cleansplat::binio {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline void put_u16(std::ostream& out, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(bytes, 2);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

/// False on short read.
inline bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
  v = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
      (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
  return true;
}

inline bool get_u16(std::istream& in, std::uint16_t& v) {
  unsigned char bytes[2];
  if (!in.read(reinterpret_cast<char*>(bytes), 2)) return false;
  v = static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
  return true;
}

inline bool get_f32(std::istream& in, float& v) {
  std::uint32_t bits = 0;
  if (!get_u32(in, bits)) return false;
  v = std::bit_cast<float>(bits);
  return true;
}

}  // namespace cleansplat::binio
