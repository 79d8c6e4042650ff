#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "ffdnet/error.hpp"

namespace ffdnet {

// Little-endian scalar encoding used by the model and map file formats.
template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_arithmetic_v<T>);
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline std::string base64_encode(const std::uint8_t* data, std::size_t n) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const std::uint32_t a = data[i];
    const std::uint32_t b = i + 1 < n ? data[i + 1] : 0;
    const std::uint32_t c = i + 2 < n ? data[i + 2] : 0;
    const std::uint32_t t = (a << 16) | (b << 8) | c;
    out.push_back(kAlphabet[(t >> 18) & 63]);
    out.push_back(kAlphabet[(t >> 12) & 63]);
    out.push_back(i + 1 < n ? kAlphabet[(t >> 6) & 63] : '=');
    out.push_back(i + 2 < n ? kAlphabet[t & 63] : '=');
  }
  return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& v) {
  return base64_encode(v.data(), v.size());
}

// Throws DataError on characters outside the standard alphabet.
inline std::vector<std::uint8_t> base64_decode(std::string_view s) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : s) {
    if (c == '=') break;
    if (c == '\n' || c == '\r') continue;
    const int v = value(c);
    if (v < 0) throw DataError("invalid base64 character");
    acc = (acc << 6) | std::uint32_t(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(std::uint8_t((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace ffdnet
