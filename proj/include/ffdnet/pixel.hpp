#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace ffdnet {

// 8-bit convention shared by image I/O and clipped noise: round half up on
// v * 255, then clamp to [0, 255].
inline std::uint8_t to_u8(double v) {
  const double s = std::floor(v * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

inline double from_u8(std::uint8_t q) { return static_cast<double>(q) / 255.0; }

inline double quantize8(double v) { return from_u8(to_u8(v)); }

}  // namespace ffdnet
