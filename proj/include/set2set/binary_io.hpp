#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace set2set::io {

// Fixed little-endian encoding independent of host byte order.

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> buf;
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(buf.data(), buf.size());
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> buf;
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(buf.data(), buf.size());
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline bool get_u64(std::istream& is, std::uint64_t& v) {
  std::array<unsigned char, 8> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) return false;
  v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return true;
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
  std::array<unsigned char, 4> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) return false;
  v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
  return true;
}

inline bool get_f64(std::istream& is, double& v) {
  std::uint64_t bits;
  if (!get_u64(is, bits)) return false;
  v = std::bit_cast<double>(bits);
  return true;
}

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), magic.size()); }

inline bool check_magic(std::istream& is, std::string_view magic) {
  std::string buf(magic.size(), '\0');
  if (!is.read(buf.data(), buf.size())) return false;
  return buf == magic;
}

// 64-bit FNV-1a, used for config hashes.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

}  // namespace set2set::io
