#pragma once

// Explicit little-endian encoding, independent of host byte order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cvblind/error.hpp"

namespace cvblind::binio {

template <class U>
inline void put_uint(std::ostream& os, U v) {
  std::array<char, sizeof(U)> b;
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

template <class U>
inline U get_uint(std::istream& is) {
  std::array<unsigned char, sizeof(U)> b;
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) fail(ErrorKind::io, "truncated binary file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) { put_uint<std::uint64_t>(os, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_uint<std::uint64_t>(is)); }

inline void put_i16(std::ostream& os, std::int16_t v) { put_uint<std::uint16_t>(os, static_cast<std::uint16_t>(v)); }
inline std::int16_t get_i16(std::istream& is) { return static_cast<std::int16_t>(get_uint<std::uint16_t>(is)); }

inline void put_magic(std::ostream& os, const char (&m)[9]) { os.write(m, 8); }
inline void expect_magic(std::istream& is, const char (&m)[9]) {
  char b[8];
  if (!is.read(b, 8) || std::memcmp(b, m, 8) != 0) fail(ErrorKind::io, std::string("bad magic, expected ") + m);
}

// FNV-1a, used for config fingerprints.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cvblind::binio
