#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ffdnet/error.hpp"
#include "ffdnet/init.hpp"
#include "ffdnet/layers.hpp"
#include "ffdnet/noise.hpp"
#include "ffdnet/pixelshuffle.hpp"
#include "ffdnet/rng.hpp"
#include "ffdnet/tensor.hpp"

namespace ffdnet {

/// Network shape. The convolution stack runs on the downsampled tensor of
/// factor^2 * in_channels sub-image channels plus the noise level map channel.
struct ModelConfig {
  std::size_t num_layers = 15;
  std::size_t num_channels = 64;
  std::size_t in_channels = 1;
  std::size_t downsample_factor = 2;
  std::size_t noise_map_channels = 1;

  static ModelConfig grayscale() { return {15, 64, 1, 2, 1}; }
  static ModelConfig color() { return {12, 96, 3, 2, 1}; }

  std::size_t sub_channels() const { return in_channels * downsample_factor * downsample_factor; }
  std::size_t net_in_channels() const { return sub_channels() + noise_map_channels; }
  std::size_t net_out_channels() const { return sub_channels(); }

  // num_layers == 2 (first and last layer only) is accepted so that small
  // gradient checks can run without a middle layer.
  void validate() const {
    require(num_layers >= 2, "ModelConfig: num_layers must be >= 2");
    require(num_channels >= 1, "ModelConfig: num_channels must be >= 1");
    require(in_channels >= 1, "ModelConfig: in_channels must be >= 1");
    require(downsample_factor >= 1, "ModelConfig: downsample_factor must be >= 1");
    require(noise_map_channels == 1, "ModelConfig: exactly one noise map channel is supported");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Receptive field in original-image pixels. Each 3x3 layer grows the field by
/// 2 sub-image pixels, and one sub-image pixel spans `factor` image pixels.
inline std::size_t receptive_field(const ModelConfig& config) {
  config.validate();
  return config.downsample_factor * (1 + 2 * config.num_layers);
}

template <typename T>
struct LayerParams {
  ConvLayer<T> conv;
  std::optional<BatchNormLayer<T>> bn;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Conv+ReLU, then (Conv+BN+ReLU) * (num_layers - 2), then Conv. After
/// merge_batchnorm the middle layers carry no BN and bn_merged is set.
template <typename T>
struct ParameterSet {
  ModelConfig config;
  std::vector<LayerParams<T>> layers;
  bool bn_merged = false;

  bool has_relu(std::size_t layer) const { return layer + 1 < layers.size(); }

  void validate() const {
    config.validate();
    require(layers.size() == config.num_layers, "ParameterSet: layer count does not match config");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& conv = layers[l].conv;
      conv.validate();
      const std::size_t in = l == 0 ? config.net_in_channels() : config.num_channels;
      const std::size_t out = l + 1 == layers.size() ? config.net_out_channels() : config.num_channels;
      require(conv.in_channels() == in && conv.out_channels() == out,
              "ParameterSet: layer " + std::to_string(l) + " has shape " +
                  conv.weights.shape().str());
      const bool middle = l > 0 && l + 1 < layers.size();
      require(layers[l].bn.has_value() == (middle && !bn_merged),
              "ParameterSet: batch normalization placement wrong at layer " + std::to_string(l));
      if (layers[l].bn) validate_batchnorm(*layers[l].bn, out);
    }
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

/// Named views of every trainable block, in a fixed order: for each layer the
/// conv weights, conv bias, then BN gamma and beta when present. Running
/// statistics are not trainable and are not listed.
template <typename T>
struct Block {
  std::string name;
  std::span<T> values;
};

template <typename T>
std::vector<Block<T>> trainable_blocks(ParameterSet<T>& p) {
  std::vector<Block<T>> out;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.push_back({pre + "conv.weight", L.conv.weights.values()});
    out.push_back({pre + "conv.bias", L.conv.bias});
    if (L.bn) {
      out.push_back({pre + "bn.gamma", L.bn->gamma});
      out.push_back({pre + "bn.beta", L.bn->beta});
    }
  }
  return out;
}

template <typename T>
std::vector<Block<const T>> trainable_blocks(const ParameterSet<T>& p) {
  std::vector<Block<const T>> out;
  for (auto& b : trainable_blocks(const_cast<ParameterSet<T>&>(p)))
    out.push_back({std::move(b.name), std::span<const T>(b.values)});
  return out;
}

/// Same layout as `p` with every value zero (also used for gradients and
/// optimizer moments).
template <typename T>
ParameterSet<T> zeros_like(const ParameterSet<T>& p) {
  ParameterSet<T> z = p;
  for (auto& b : trainable_blocks(z)) std::fill(b.values.begin(), b.values.end(), T(0));
  return z;
}

template <typename T>
ParameterSet<T> make_parameters(const ModelConfig& config) {
  config.validate();
  ParameterSet<T> p;
  p.config = config;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t in = l == 0 ? config.net_in_channels() : config.num_channels;
    const std::size_t out = l + 1 == config.num_layers ? config.net_out_channels() : config.num_channels;
    LayerParams<T> L{ConvLayer<T>(out, in, 3), std::nullopt};
    if (l > 0 && l + 1 < config.num_layers) L.bn = BatchNormLayer<T>(out);
    p.layers.push_back(std::move(L));
  }
  return p;
}

/// Orthogonal filters (gain 1) on every layer, zero biases, BN at gamma 1,
/// beta 0 and running statistics (0, 1). Layer l draws from stream l of seed.
template <typename T>
ParameterSet<T> default_init(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet<T> p = make_parameters<T>(config);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    CounterRng rng = CounterRng::derive(seed, l);
    auto& conv = p.layers[l].conv;
    conv.weights = orthogonal_init<T>(conv.weights.shape(), 1.0, rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Padding for odd-sized inputs.

struct CropSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  bool empty() const { return height == 0 && width == 0; }
};

template <typename T>
struct Padded {
  Tensor4<T> tensor;
  CropSpec crop;  // empty when no padding was needed
};

/// Reflect-pads bottom/right so that height and width become multiples of
/// `multiple` (at most one pixel each for the default of 2).
template <typename T>
Padded<T> pad_to_multiple(const Tensor4<T>& image, std::size_t multiple) {
  const std::size_t H = image.height(), W = image.width();
  const std::size_t Hp = (H + multiple - 1) / multiple * multiple;
  const std::size_t Wp = (W + multiple - 1) / multiple * multiple;
  if (Hp == H && Wp == W) return {image, {}};
  require(H >= 1 && W >= 1, "pad_to_multiple: empty image");
  auto reflect = [](std::size_t i, std::size_t n) -> std::size_t {
    if (i < n) return i;
    const std::size_t over = i - n + 1;  // 1 for the first padded index
    return n > over ? n - 1 - over : 0;
  };
  Tensor4<T> out(image.batch(), image.channels(), Hp, Wp);
  for (std::size_t b = 0; b < image.batch(); ++b)
    for (std::size_t c = 0; c < image.channels(); ++c)
      for (std::size_t y = 0; y < Hp; ++y)
        for (std::size_t x = 0; x < Wp; ++x)
          out(b, c, y, x) = image(b, c, reflect(y, H), reflect(x, W));
  return {std::move(out), {H, W}};
}

template <typename T>
Padded<T> pad_to_even(const Tensor4<T>& image) {
  return pad_to_multiple(image, 2);
}

template <typename T>
Tensor4<T> crop(const Tensor4<T>& image, const CropSpec& spec) {
  if (spec.empty()) return image;
  require(spec.height <= image.height() && spec.width <= image.width(), "crop: spec larger than image");
  Tensor4<T> out(image.batch(), image.channels(), spec.height, spec.width);
  for (std::size_t b = 0; b < image.batch(); ++b)
    for (std::size_t c = 0; c < image.channels(); ++c)
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) out(b, c, y, x) = image(b, c, y, x);
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward.

/// Everything the backward pass needs from a forward pass.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor4<T>> layer_input;  // input of each conv; [0] is the network input
  std::vector<Tensor4<T>> conv_output;  // pre-BN conv output, only where BN is present
  std::vector<BatchStats<T>> bn_stats;  // per layer, empty where no BN
  Tensor4<T> net_output;                // last conv output (downsampled domain)
  Tensor4<T> output;                    // full-resolution estimate
};

namespace detail {

template <typename T>
void check_finite(const Tensor4<T>& t, std::size_t layer, const char* what) {
  for (T v : t.values())
    if (!std::isfinite(v))
      throw TrainingError(std::string("non-finite value in ") + what + " of layer " +
                          std::to_string(layer));
}

// Map of shape (N or 1, 1, H, W) or (N or 1, 1, H/f, W/f); returns the
// half-resolution map with batch N.
template <typename T>
Tensor4<T> resolve_map(const Tensor4<T>& map, std::size_t N, std::size_t H, std::size_t W,
                       std::size_t f) {
  require(map.channels() == 1, "forward: noise level map must have one channel");
  require(map.batch() == N || map.batch() == 1,
          "forward: map batch " + std::to_string(map.batch()) + " does not match " + std::to_string(N));
  const std::size_t h = H / f, w = W / f;
  Tensor4<T> out(N, 1, h, w);
  for (std::size_t b = 0; b < N; ++b) {
    const std::size_t src = map.batch() == 1 ? 0 : b;
    if (map.height() == H && map.width() == W) {
      bilinear_downsample(map.plane(src, 0).data(), H, W, f, out.plane(b, 0).data());
    } else if (map.height() == h && map.width() == w) {
      const auto s = map.plane(src, 0);
      std::copy(s.begin(), s.end(), out.plane(b, 0).begin());
    } else {
      throw ContractViolation("forward: map " + std::to_string(map.height()) + "x" +
                              std::to_string(map.width()) + " matches neither the image " +
                              std::to_string(H) + "x" + std::to_string(W) + " nor its downsampled size");
    }
  }
  return out;
}

}  // namespace detail

/// Network input: the space-to-depth sub-images followed by the downsampled
/// noise level map as the last channel.
template <typename T>
Tensor4<T> assemble_input(const ModelConfig& config, const Tensor4<T>& noisy, const Tensor4<T>& map) {
  const std::size_t f = config.downsample_factor;
  require(noisy.channels() == config.in_channels,
          "forward: image has " + std::to_string(noisy.channels()) + " channels, model expects " +
              std::to_string(config.in_channels));
  require(noisy.height() % f == 0 && noisy.width() % f == 0,
          "forward: image size must be a multiple of " + std::to_string(f) + " (use pad_to_even)");
  const Tensor4<T> sub = space_to_depth(noisy, f);
  const Tensor4<T> m = detail::resolve_map(map, noisy.batch(), noisy.height(), noisy.width(), f);
  Tensor4<T> in(sub.batch(), config.net_in_channels(), sub.height(), sub.width());
  for (std::size_t b = 0; b < sub.batch(); ++b) {
    for (std::size_t c = 0; c < sub.channels(); ++c) {
      const auto s = sub.plane(b, c);
      std::copy(s.begin(), s.end(), in.plane(b, c).begin());
    }
    const auto s = m.plane(b, 0);
    std::copy(s.begin(), s.end(), in.plane(b, sub.channels()).begin());
  }
  return in;
}

template <typename T>
ForwardTrace<T> forward_traced(const ParameterSet<T>& params, const Tensor4<T>& noisy,
                               const Tensor4<T>& map, Mode mode, bool check = false) {
  params.validate();
  ForwardTrace<T> tr;
  const std::size_t L = params.layers.size();
  tr.layer_input.reserve(L);
  tr.conv_output.resize(L);
  tr.bn_stats.resize(L);
  Tensor4<T> act = assemble_input(params.config, noisy, map);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = params.layers[l];
    tr.layer_input.push_back(std::move(act));
    Tensor4<T> z = conv2d_forward(tr.layer_input.back(), layer.conv);
    if (layer.bn) {
      auto r = batchnorm_forward(z, *layer.bn, mode);
      tr.conv_output[l] = std::move(z);
      tr.bn_stats[l] = std::move(r.stats);
      z = std::move(r.output);
    }
    if (params.has_relu(l)) z = relu_forward(z);
    if (check) detail::check_finite(z, l, "activations");
    act = std::move(z);
  }
  tr.net_output = std::move(act);
  tr.output = depth_to_space(tr.net_output, params.config.downsample_factor);
  return tr;
}

/// Clean-image estimate from a noisy image and its noise level map. The map
/// may be given at full or at downsampled resolution, with batch 1 (shared)
/// or matching the image batch. The estimate is the image itself, not the
/// noise residual.
template <typename T>
Tensor4<T> forward(const ParameterSet<T>& params, const Tensor4<T>& noisy, const Tensor4<T>& map,
                   Mode mode = Mode::infer) {
  return forward_traced(params, noisy, map, mode).output;
}

template <typename T>
Tensor4<T> forward(const ParameterSet<T>& params, const Tensor4<T>& noisy, const NoiseLevelMap& map,
                   Mode mode = Mode::infer) {
  return forward(params, noisy, map_tensor<T>(map), mode);
}

template <typename T>
struct BackwardResult {
  T loss = T(0);
  ParameterSet<T> grads;
  // Moving-average running statistics per BN layer (train mode only).
  std::vector<std::optional<std::pair<std::vector<T>, std::vector<T>>>> running_updates;
  Tensor4<T> output;
};

/// Loss (1 / 2N) * sum_i ||F(y_i, M_i) - x_i||^2 and its gradient with respect
/// to every trainable block.
template <typename T>
BackwardResult<T> backward(const ParameterSet<T>& params, const Tensor4<T>& noisy,
                           const Tensor4<T>& map, const Tensor4<T>& target, Mode mode = Mode::train) {
  require(target.shape() == noisy.shape(), "backward: target shape " + target.shape().str() +
                                               " differs from input " + noisy.shape().str());
  ForwardTrace<T> tr = forward_traced(params, noisy, map, mode, true);
  const std::size_t N = noisy.batch();

  BackwardResult<T> r;
  r.grads = zeros_like(params);
  r.running_updates.resize(params.layers.size());

  Tensor4<T> grad(tr.output.shape());
  T loss = T(0);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const T d = tr.output[i] - target[i];
    loss += d * d;
    grad[i] = d / T(N);
  }
  r.loss = loss / T(2 * N);
  if (!std::isfinite(r.loss)) throw TrainingError("non-finite loss");

  grad = space_to_depth(grad, params.config.downsample_factor);
  const std::size_t L = params.layers.size();
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = params.layers[l];
    auto& g = r.grads.layers[l];
    if (params.has_relu(l)) grad = relu_backward(tr.layer_input[l + 1], grad);
    if (layer.bn) {
      auto bg = batchnorm_backward(tr.conv_output[l], *layer.bn, tr.bn_stats[l], grad, mode);
      g.bn->gamma = std::move(bg.gamma);
      g.bn->beta = std::move(bg.beta);
      grad = std::move(bg.input);
      if (mode == Mode::train)
        r.running_updates[l] = std::make_pair(tr.bn_stats[l].new_running_mean, tr.bn_stats[l].new_running_var);
    }
    auto cg = conv2d_backward(tr.layer_input[l], layer.conv, grad, l > 0);
    g.conv.weights = std::move(cg.weights);
    g.conv.bias = std::move(cg.bias);
    grad = std::move(cg.input);
  }
  for (auto& b : trainable_blocks(r.grads))
    for (T v : b.values)
      if (!std::isfinite(v)) throw TrainingError("non-finite gradient in " + b.name);
  r.output = std::move(tr.output);
  return r;
}

/// Writes the moving-average running statistics reported by a train-mode
/// backward pass into the parameters.
template <typename T>
void apply_running_updates(ParameterSet<T>& params, const BackwardResult<T>& r) {
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    if (r.running_updates[l] && params.layers[l].bn) {
      params.layers[l].bn->running_mean = r.running_updates[l]->first;
      params.layers[l].bn->running_var = r.running_updates[l]->second;
    }
}

/// Folds every BN layer into its convolution; the result has no BN layers and
/// computes the same function as the input in infer mode.
template <typename T>
ParameterSet<T> merge_batchnorm(const ParameterSet<T>& params) {
  require(!params.bn_merged, "merge_batchnorm: parameters are already merged");
  params.validate();
  ParameterSet<T> out = params;
  for (auto& L : out.layers)
    if (L.bn) {
      L.conv = batchnorm_fold(L.conv, *L.bn);
      L.bn.reset();
    }
  out.bn_merged = true;
  return out;
}

/// Denoises images of any size: reflect-pads to the downsampling factor,
/// runs inference with the full-resolution map, and crops back.
template <typename T>
Tensor4<T> denoise(const ParameterSet<T>& params, const Tensor4<T>& noisy, const NoiseLevelMap& map) {
  require(map.height == noisy.height() && map.width == noisy.width(),
          "denoise: map " + std::to_string(map.height) + "x" + std::to_string(map.width) +
              " does not match image " + std::to_string(noisy.height()) + "x" + std::to_string(noisy.width()));
  const std::size_t f = params.config.downsample_factor;
  Padded<T> img = pad_to_multiple(noisy, f);
  Padded<T> m = pad_to_multiple(map_tensor<T>(map), f);
  return crop(forward(params, img.tensor, m.tensor, Mode::infer), img.crop);
}

}  // namespace ffdnet
