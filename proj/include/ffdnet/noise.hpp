#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ffdnet/error.hpp"
#include "ffdnet/pixel.hpp"
#include "ffdnet/rng.hpp"
#include "ffdnet/tensor.hpp"

namespace ffdnet {

// Noise levels are quoted in 8-bit units (sigma = 25 means 25/255 on the [0,1]
// pixel scale). Maps store the normalized value sigma / 255 so that the map
// channel and the image share one scale.
inline constexpr double kSigmaScale = 255.0;
inline constexpr double kMaxSigma = 75.0;

enum class MapKind { uniform, gradient, anchored, custom };

inline const char* to_string(MapKind k) {
  switch (k) {
    case MapKind::uniform: return "uniform";
    case MapKind::gradient: return "gradient";
    case MapKind::anchored: return "anchored";
    case MapKind::custom: return "custom";
  }
  return "custom";
}

/// Per-pixel noise level field, row-major (height, width), normalized units.
struct NoiseLevelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  MapKind kind = MapKind::custom;

  NoiseLevelMap() = default;
  NoiseLevelMap(std::size_t h, std::size_t w, double v = 0.0, MapKind k = MapKind::custom)
      : height(h), width(w), values(h * w, v), kind(k) {}

  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

  double mean() const {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }
  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max() const { return *std::max_element(values.begin(), values.end()); }

  // Values equal, kind ignored.
  bool same_field(const NoiseLevelMap& o) const {
    return height == o.height && width == o.width && values == o.values;
  }
};

struct NoiseSpec {
  NoiseLevelMap map;
  bool clipped = false;
  std::uint64_t seed = 0;
};

struct RegionAnchor {
  std::size_t row = 0;
  std::size_t col = 0;
  double sigma = 0.0;  // 8-bit units, [0, 75]
};

inline NoiseLevelMap uniform_map(std::size_t h, std::size_t w, double sigma) {
  require(sigma >= 0.0, "uniform_map: sigma must be non-negative");
  return NoiseLevelMap(h, w, sigma / kSigmaScale, MapKind::uniform);
}

enum class Axis { horizontal, vertical };

/// Linear ramp from sigma_lo at the first column (row) to sigma_hi at the last.
inline NoiseLevelMap gradient_map(std::size_t h, std::size_t w, double sigma_lo, double sigma_hi,
                                  Axis axis = Axis::horizontal) {
  require(sigma_lo >= 0.0 && sigma_lo <= sigma_hi, "gradient_map: need 0 <= sigma_lo <= sigma_hi");
  NoiseLevelMap m(h, w, 0.0, sigma_lo == sigma_hi ? MapKind::uniform : MapKind::gradient);
  const std::size_t len = axis == Axis::horizontal ? w : h;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t t = axis == Axis::horizontal ? x : y;
      double s = sigma_lo;
      if (len > 1 && t == len - 1) s = sigma_hi;
      else if (len > 1) s = sigma_lo + (sigma_hi - sigma_lo) * double(t) / double(len - 1);
      m.at(y, x) = s / kSigmaScale;
    }
  return m;
}

/// Inverse-distance-weighted (power 2) interpolation of anchor noise levels.
/// The result is exact at each anchor pixel and never leaves the range spanned
/// by the anchors (nor [0, 75]).
inline NoiseLevelMap anchored_map(std::size_t h, std::size_t w,
                                  const std::vector<RegionAnchor>& anchors) {
  require(!anchors.empty(), "anchored_map: at least one anchor is required");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& a : anchors) {
    require(a.row < h && a.col < w, "anchored_map: anchor (" + std::to_string(a.row) + "," +
                                        std::to_string(a.col) + ") outside " + std::to_string(h) +
                                        "x" + std::to_string(w) + " image");
    require(a.sigma >= 0.0 && a.sigma <= kMaxSigma, "anchored_map: anchor sigma outside [0, 75]");
    lo = std::min(lo, a.sigma);
    hi = std::max(hi, a.sigma);
  }
  NoiseLevelMap m(h, w, 0.0, MapKind::anchored);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double num = 0.0, den = 0.0, exact_sum = 0.0;
      int exact = 0;
      for (const auto& a : anchors) {
        const double dy = double(y) - double(a.row), dx = double(x) - double(a.col);
        const double d2 = dy * dy + dx * dx;
        if (d2 == 0.0) {
          exact_sum += a.sigma;
          ++exact;
          continue;
        }
        num += a.sigma / d2;
        den += 1.0 / d2;
      }
      double s = exact > 0 ? exact_sum / exact : num / den;
      s = std::clamp(s, lo, hi);
      m.at(y, x) = s / kSigmaScale;
    }
  return m;
}

// Bilinear resampling at output pixel centres (half-pixel convention); for
// factor 2 every output value is the mean of its 2x2 source block.
template <typename T>
void bilinear_downsample(const T* src, std::size_t h, std::size_t w, std::size_t factor, T* dst) {
  const std::size_t ho = h / factor, wo = w / factor;
  auto coord = [&](std::size_t o, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
    double s = (double(o) + 0.5) * double(factor) - 0.5;
    s = std::clamp(s, 0.0, double(n - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, n - 1);
    t = s - double(i0);
  };
  for (std::size_t y = 0; y < ho; ++y) {
    std::size_t y0, y1;
    double ty;
    coord(y, h, y0, y1, ty);
    for (std::size_t x = 0; x < wo; ++x) {
      std::size_t x0, x1;
      double tx;
      coord(x, w, x0, x1, tx);
      const double top = (1 - tx) * double(src[y0 * w + x0]) + tx * double(src[y0 * w + x1]);
      const double bot = (1 - tx) * double(src[y1 * w + x0]) + tx * double(src[y1 * w + x1]);
      dst[y * wo + x] = static_cast<T>((1 - ty) * top + ty * bot);
    }
  }
}

inline NoiseLevelMap downsample_map_bilinear(const NoiseLevelMap& map, std::size_t factor = 2) {
  require(factor >= 1 && map.height % factor == 0 && map.width % factor == 0,
          "downsample_map_bilinear: map size not divisible by factor");
  NoiseLevelMap out(map.height / factor, map.width / factor, 0.0, map.kind);
  bilinear_downsample(map.values.data(), map.height, map.width, factor, out.values.data());
  return out;
}

// (1, 1, h, w) tensor holding the normalized map values.
template <typename T>
Tensor4<T> map_tensor(const NoiseLevelMap& map) {
  Tensor4<T> t(1, 1, map.height, map.width);
  for (std::size_t i = 0; i < map.values.size(); ++i) t[i] = static_cast<T>(map.values[i]);
  return t;
}

/// y = x + v1 * M with v1 ~ N(0, 1) drawn per element in linear index order.
/// Clipped mode clamps to [0, 1] and quantizes to 8-bit levels afterwards,
/// which is what MATLAB's imnoise(x, 'gaussian', 0, s^2) produces on uint8 data.
template <typename T>
Tensor4<T> add_awgn(const Tensor4<T>& clean, const NoiseSpec& spec) {
  const auto& m = spec.map;
  require(m.height == clean.height() && m.width == clean.width(),
          "add_awgn: map " + std::to_string(m.height) + "x" + std::to_string(m.width) +
              " does not match image " + std::to_string(clean.height()) + "x" +
              std::to_string(clean.width()));
  for (double v : m.values) require(v >= 0.0, "add_awgn: negative noise level in map");
  CounterRng rng(spec.seed);
  Tensor4<T> out(clean.shape());
  const std::size_t HW = clean.height() * clean.width();
  for (std::size_t b = 0; b < clean.batch(); ++b)
    for (std::size_t c = 0; c < clean.channels(); ++c) {
      const auto src = clean.plane(b, c);
      auto dst = out.plane(b, c);
      for (std::size_t i = 0; i < HW; ++i) {
        const double sigma = m.values[i];
        // A zero level adds nothing; the draw is still consumed so the noise
        // field of a map does not depend on where its zeros are.
        const double n = rng.normal();
        double y = double(src[i]) + (sigma > 0.0 ? n * sigma : 0.0);
        if (spec.clipped) y = quantize8(std::clamp(y, 0.0, 1.0));
        dst[i] = sigma > 0.0 || spec.clipped ? static_cast<T>(y) : src[i];
      }
    }
  return out;
}

}  // namespace ffdnet
