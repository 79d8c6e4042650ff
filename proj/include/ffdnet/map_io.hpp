#pragma once

#include <cmath>
#include <string>

#include "ffdnet/bytes.hpp"
#include "ffdnet/image_io.hpp"
#include "ffdnet/noise.hpp"

namespace ffdnet {

// Noise level map file:
//
//   "NLM1\n" "<width> <height>\n" "75\n"
//   width*height float32 little-endian values, row-major, sigma in 8-bit units.
//
// The "75" line is the nominal maximum level, kept for readers that want to
// scale the field for display.

inline Bytes encode_map(const NoiseLevelMap& m) {
  const std::string header =
      "NLM1\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n75\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + 4 * m.values.size());
  for (double v : m.values) put_le<float>(out, static_cast<float>(v * kSigmaScale));
  return out;
}

inline NoiseLevelMap decode_map(const Bytes& b) {
  if (b.size() < 5 || std::string(b.begin(), b.begin() + 5) != "NLM1\n")
    throw DataError("not a noise level map file (missing NLM1 header)");
  std::size_t pos = 5;
  const std::size_t w = detail::pnm_int(b, pos);
  const std::size_t h = detail::pnm_int(b, pos);
  (void)detail::pnm_int(b, pos);
  if (pos >= b.size() || b[pos] != '\n') throw DataError("malformed noise level map header");
  ++pos;
  if (b.size() - pos != 4 * w * h) throw DataError("noise level map payload size mismatch");
  NoiseLevelMap m(h, w, 0.0, MapKind::custom);
  for (std::size_t i = 0; i < w * h; ++i) {
    const float s = get_le<float>(&b[pos + 4 * i]);
    if (!std::isfinite(s) || s < 0.0f) throw DataError("noise level map holds a negative or non-finite value");
    m.values[i] = double(s) / kSigmaScale;
  }
  return m;
}

// Grayscale visualization: pixel = round(sigma * 255 / 75), clamped.
inline Image8 map_to_image(const NoiseLevelMap& m) {
  Image8 img{m.width, m.height, 1, {}};
  img.pixels.resize(m.values.size());
  for (std::size_t i = 0; i < m.values.size(); ++i)
    img.pixels[i] = to_u8(m.values[i] * kSigmaScale / kMaxSigma);
  return img;
}

inline NoiseLevelMap image_to_map(const Image8& img) {
  if (img.channels != 1) throw DataError("noise level map image must be grayscale");
  NoiseLevelMap m(img.height, img.width, 0.0, MapKind::custom);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    m.values[i] = double(img.pixels[i]) * kMaxSigma / 255.0 / kSigmaScale;
  return m;
}

inline NoiseLevelMap load_map(const std::string& path) {
  const Bytes b = read_file(path);
  try {
    if (is_png(b)) return image_to_map(decode_png(b));
    return decode_map(b);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void save_map(const std::string& path, const NoiseLevelMap& m) {
  if (lower_extension(path) == ".png") write_file(path, encode_png(map_to_image(m)));
  else write_file(path, encode_map(m));
}

}  // namespace ffdnet
