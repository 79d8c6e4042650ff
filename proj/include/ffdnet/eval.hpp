#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ffdnet/error.hpp"
#include "ffdnet/model.hpp"
#include "ffdnet/noise.hpp"
#include "ffdnet/pixel.hpp"

namespace ffdnet {

/// Peak signal-to-noise ratio in dB with peak 1.0 on the [0, 1] scale. Equal
/// inputs give +infinity (printed as "inf"). With quantize set both inputs are
/// first rounded to 8-bit levels.
template <typename T>
double psnr(const Tensor4<T>& reference, const Tensor4<T>& test, bool quantize = false) {
  require(reference.shape() == test.shape(), "psnr: shape " + reference.shape().str() +
                                                 " differs from " + test.shape().str());
  require(!reference.empty(), "psnr: empty images");
  double sq = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    double a = double(reference[i]), b = double(test[i]);
    if (quantize) {
      a = quantize8(a);
      b = quantize8(b);
    }
    sq += (a - b) * (a - b);
  }
  const double mse = sq / double(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline std::string format_db(double db) {
  if (std::isinf(db)) return db > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", db);
  return buf;
}

struct SweepPoint {
  double sigma = 0.0;  // swept noise level, 8-bit units
  double psnr = 0.0;
};

struct EvalOptions {
  std::uint64_t seed = 0;
  bool clipped = false;
  bool quantize = false;
};

/// Uniform map at the mean of `map`; a constant map is returned unchanged so
/// that the two maps coincide exactly.
inline NoiseLevelMap mean_uniform_map(const NoiseLevelMap& map) {
  if (map.values.empty() || map.min() == map.max())
    return NoiseLevelMap(map.height, map.width, map.values.empty() ? 0.0 : map.values.front(), MapKind::uniform);
  return NoiseLevelMap(map.height, map.width, map.mean(), MapKind::uniform);
}

/// Corrupts `clean` once at true_sigma and denoises it with a uniform map at
/// each input level.
template <typename T>
std::vector<SweepPoint> sensitivity_sweep(const ParameterSet<T>& params, const Tensor4<T>& clean,
                                          double true_sigma, const std::vector<double>& input_sigmas,
                                          const EvalOptions& opt = {}) {
  const std::size_t H = clean.height(), W = clean.width();
  const Tensor4<T> noisy = add_awgn(clean, NoiseSpec{uniform_map(H, W, true_sigma), opt.clipped, opt.seed});
  std::vector<SweepPoint> out;
  out.reserve(input_sigmas.size());
  for (double s : input_sigmas)
    out.push_back({s, psnr(clean, denoise(params, noisy, uniform_map(H, W, s)), opt.quantize)});
  return out;
}

/// The other axis of the sensitivity curves: the input level is held fixed and
/// the true level varies (each true level uses the same seed).
template <typename T>
std::vector<SweepPoint> true_sigma_sweep(const ParameterSet<T>& params, const Tensor4<T>& clean,
                                         double input_sigma, const std::vector<double>& true_sigmas,
                                         const EvalOptions& opt = {}) {
  const std::size_t H = clean.height(), W = clean.width();
  std::vector<SweepPoint> out;
  out.reserve(true_sigmas.size());
  for (double s : true_sigmas) {
    const Tensor4<T> noisy = add_awgn(clean, NoiseSpec{uniform_map(H, W, s), opt.clipped, opt.seed});
    out.push_back({s, psnr(clean, denoise(params, noisy, uniform_map(H, W, input_sigma)), opt.quantize)});
  }
  return out;
}

struct VariantReport {
  double psnr_noisy = 0.0;
  double psnr_matched = 0.0;
  double psnr_uniform_mean = 0.0;
};

/// Spatially variant noise: corrupts with true_map, then denoises with the
/// true map and with a uniform map at its mean.
template <typename T>
VariantReport variant_noise_report(const ParameterSet<T>& params, const Tensor4<T>& clean,
                                   const NoiseLevelMap& true_map, const EvalOptions& opt = {}) {
  const Tensor4<T> noisy = add_awgn(clean, NoiseSpec{true_map, opt.clipped, opt.seed});
  VariantReport r;
  r.psnr_noisy = psnr(clean, noisy, opt.quantize);
  r.psnr_matched = psnr(clean, denoise(params, noisy, true_map), opt.quantize);
  r.psnr_uniform_mean = psnr(clean, denoise(params, noisy, mean_uniform_map(true_map)), opt.quantize);
  return r;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& pts, const std::string& column = "input_sigma") {
  std::string out = column + ",psnr\n";
  char buf[64];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%g,", p.sigma);
    out += buf + format_db(p.psnr) + "\n";
  }
  return out;
}

inline std::string sweep_table(const std::vector<SweepPoint>& pts, const std::string& column = "input sigma") {
  char buf[96];
  std::snprintf(buf, sizeof buf, "| %-12s | %-10s |\n", column.c_str(), "PSNR (dB)");
  std::string out = buf;
  out += "|--------------|------------|\n";
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "| %-12g | %-10s |\n", p.sigma, format_db(p.psnr).c_str());
    out += buf;
  }
  return out;
}

}  // namespace ffdnet
