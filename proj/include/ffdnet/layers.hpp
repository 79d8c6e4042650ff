#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ffdnet/error.hpp"
#include "ffdnet/tensor.hpp"

namespace ffdnet {

/// 2-D convolution, stride 1, zero padding of k/2 on every border so the
/// spatial size is preserved. The network only uses 3x3 kernels; other odd
/// sizes are accepted so tests can build tiny reference cases.
template <typename T>
struct ConvLayer {
  Tensor4<T> weights;  // (out_channels, in_channels, k, k)
  std::vector<T> bias;  // out_channels

  ConvLayer() = default;
  ConvLayer(std::size_t out_ch, std::size_t in_ch, std::size_t k = 3)
      : weights(out_ch, in_ch, k, k), bias(out_ch, T(0)) {}

  std::size_t out_channels() const { return weights.batch(); }
  std::size_t in_channels() const { return weights.channels(); }
  std::size_t kernel() const { return weights.height(); }

  void validate() const {
    require(weights.height() == weights.width() && weights.height() % 2 == 1,
            "ConvLayer: kernel must be square with odd size, got " + weights.shape().str());
    require(bias.size() == out_channels(), "ConvLayer: bias length does not match out_channels");
  }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

template <typename T>
struct BatchNormLayer {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  // Weight kept on the old running statistic in the moving average.
  T momentum = T(0.9);

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  std::size_t channels() const { return gamma.size(); }

  friend bool operator==(const BatchNormLayer&, const BatchNormLayer&) = default;
};

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const ConvLayer<T>& layer) {
  layer.validate();
  require(input.channels() == layer.in_channels(),
          "conv2d_forward: input has " + std::to_string(input.channels()) +
              " channels, layer expects " + std::to_string(layer.in_channels()));
  const std::size_t N = input.batch(), C = input.channels(), H = input.height(),
                    W = input.width(), O = layer.out_channels();
  const long K = static_cast<long>(layer.kernel()), P = K / 2;
  Tensor4<T> out(N, O, H, W);

  for (std::size_t b = 0; b < N; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      auto dst = out.plane(b, o);
      std::fill(dst.begin(), dst.end(), layer.bias[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const auto src = input.plane(b, c);
        for (long ky = 0; ky < K; ++ky) {
          const long dy = ky - P;
          const long y0 = std::max(0L, -dy), y1 = std::min<long>(H, long(H) - dy);
          for (long kx = 0; kx < K; ++kx) {
            const T wv = layer.weights(o, c, ky, kx);
            const long dx = kx - P;
            const long x0 = std::max(0L, -dx), x1 = std::min<long>(W, long(W) - dx);
            for (long y = y0; y < y1; ++y) {
              T* d = dst.data() + y * W;
              const T* s = src.data() + (y + dy) * W + dx;
              for (long x = x0; x < x1; ++x) d[x] += wv * s[x];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weights;
  std::vector<T> bias;
};

/// Gradients of sum(grad_out * conv2d_forward(input, layer)) with respect to
/// the input, the weights and the bias. Set need_input = false to skip the
/// input gradient (first layer of a network).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const ConvLayer<T>& layer,
                             const Tensor4<T>& grad_out, bool need_input = true) {
  layer.validate();
  require(input.channels() == layer.in_channels(), "conv2d_backward: channel mismatch");
  require(grad_out.shape() == Shape4{input.batch(), layer.out_channels(), input.height(),
                                     input.width()},
          "conv2d_backward: grad_out shape " + grad_out.shape().str() +
              " inconsistent with input " + input.shape().str());
  const std::size_t N = input.batch(), C = input.channels(), H = input.height(),
                    W = input.width(), O = layer.out_channels();
  const long K = static_cast<long>(layer.kernel()), P = K / 2;

  ConvGrads<T> g;
  g.weights = Tensor4<T>(layer.weights.shape());
  g.bias.assign(O, T(0));
  if (need_input) g.input = Tensor4<T>(input.shape());

  for (std::size_t b = 0; b < N; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      const auto go = grad_out.plane(b, o);
      T bsum = T(0);
      for (T v : go) bsum += v;
      g.bias[o] += bsum;
      for (std::size_t c = 0; c < C; ++c) {
        const auto src = input.plane(b, c);
        std::span<T> gin = need_input ? g.input.plane(b, c) : std::span<T>{};
        for (long ky = 0; ky < K; ++ky) {
          const long dy = ky - P;
          const long y0 = std::max(0L, -dy), y1 = std::min<long>(H, long(H) - dy);
          for (long kx = 0; kx < K; ++kx) {
            const long dx = kx - P;
            const long x0 = std::max(0L, -dx), x1 = std::min<long>(W, long(W) - dx);
            const T wv = layer.weights(o, c, ky, kx);
            T acc = T(0);
            for (long y = y0; y < y1; ++y) {
              const T* gr = go.data() + y * W;
              const T* s = src.data() + (y + dy) * W + dx;
              for (long x = x0; x < x1; ++x) acc += gr[x] * s[x];
              if (need_input) {
                T* gi = gin.data() + (y + dy) * W + dx;
                for (long x = x0; x < x1; ++x) gi[x] += wv * gr[x];
              }
            }
            g.weights(o, c, ky, kx) += acc;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& input) {
  Tensor4<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

// The derivative at exactly zero is taken as zero.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out) {
  require(input.shape() == grad_out.shape(), "relu_backward: shape mismatch");
  Tensor4<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
struct BatchStats {
  std::vector<T> mean;      // per-channel batch mean (train) or running mean (infer)
  std::vector<T> var;       // biased batch variance (train) or running variance (infer)
  std::vector<T> inv_std;   // 1 / sqrt(var + epsilon)
  std::vector<T> new_running_mean;  // running statistics after the moving-average update
  std::vector<T> new_running_var;
};

template <typename T>
struct BatchNormResult {
  Tensor4<T> output;
  BatchStats<T> stats;
};

template <typename T>
void validate_batchnorm(const BatchNormLayer<T>& bn, std::size_t channels) {
  require(bn.gamma.size() == channels && bn.beta.size() == channels,
          "batchnorm: affine parameters do not match " + std::to_string(channels) + " channels");
  require(bn.epsilon >= T(0), "batchnorm: epsilon must be non-negative");
}

template <typename T>
void require_running_stats(const BatchNormLayer<T>& bn) {
  require(bn.running_mean.size() == bn.channels() && bn.running_var.size() == bn.channels(),
          "batchnorm: running statistics missing");
  for (std::size_t k = 0; k < bn.channels(); ++k)
    require(bn.running_var[k] + bn.epsilon > T(0),
            "batchnorm: running_var + epsilon must be positive (channel " + std::to_string(k) +
                ")");
}

/// Train mode normalizes with the per-channel batch mean and biased variance
/// and reports the moving-average update of the running statistics (using the
/// unbiased variance) in stats.new_running_*; the layer itself is not touched.
/// Infer mode normalizes with the running statistics.
template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor4<T>& input, const BatchNormLayer<T>& bn,
                                     Mode mode) {
  const std::size_t N = input.batch(), C = input.channels(), HW = input.height() * input.width();
  validate_batchnorm(bn, C);
  BatchNormResult<T> r;
  auto& st = r.stats;
  st.mean.assign(C, T(0));
  st.var.assign(C, T(0));
  st.inv_std.assign(C, T(0));

  if (mode == Mode::train) {
    const std::size_t count = N * HW;
    require(count >= 2, "batchnorm_forward: train mode needs at least 2 values per channel");
    require(bn.running_mean.size() == C && bn.running_var.size() == C,
            "batchnorm_forward: running statistics missing");
    st.new_running_mean = bn.running_mean;
    st.new_running_var = bn.running_var;
    for (std::size_t k = 0; k < C; ++k) {
      T sum = T(0);
      for (std::size_t b = 0; b < N; ++b)
        for (T v : input.plane(b, k)) sum += v;
      const T mu = sum / T(count);
      T sq = T(0);
      for (std::size_t b = 0; b < N; ++b)
        for (T v : input.plane(b, k)) sq += (v - mu) * (v - mu);
      const T var = sq / T(count);
      require(var + bn.epsilon > T(0), "batchnorm_forward: zero variance in channel " +
                                           std::to_string(k) + " with epsilon 0");
      st.mean[k] = mu;
      st.var[k] = var;
      st.new_running_mean[k] = bn.momentum * bn.running_mean[k] + (T(1) - bn.momentum) * mu;
      st.new_running_var[k] = bn.momentum * bn.running_var[k] +
                              (T(1) - bn.momentum) * var * T(count) / T(count - 1);
    }
  } else {
    require_running_stats(bn);
    st.mean = bn.running_mean;
    st.var = bn.running_var;
  }
  for (std::size_t k = 0; k < C; ++k) st.inv_std[k] = T(1) / std::sqrt(st.var[k] + bn.epsilon);

  r.output = Tensor4<T>(input.shape());
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t k = 0; k < C; ++k) {
      const T scale = bn.gamma[k] * st.inv_std[k];
      const T shift = bn.beta[k] - st.mean[k] * scale;
      const auto src = input.plane(b, k);
      auto dst = r.output.plane(b, k);
      for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i] * scale + shift;
    }
  return r;
}

template <typename T>
struct BatchNormGrads {
  Tensor4<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

/// Backward pass matching batchnorm_forward in the same mode. In train mode the
/// batch mean and variance are functions of the input and are differentiated
/// through.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor4<T>& input, const BatchNormLayer<T>& bn,
                                     const BatchStats<T>& stats, const Tensor4<T>& grad_out,
                                     Mode mode) {
  require(input.shape() == grad_out.shape(), "batchnorm_backward: shape mismatch");
  const std::size_t N = input.batch(), C = input.channels(), HW = input.height() * input.width();
  validate_batchnorm(bn, C);
  BatchNormGrads<T> g;
  g.input = Tensor4<T>(input.shape());
  g.gamma.assign(C, T(0));
  g.beta.assign(C, T(0));
  const T count = T(N * HW);

  for (std::size_t k = 0; k < C; ++k) {
    const T mu = stats.mean[k], is = stats.inv_std[k];
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (std::size_t b = 0; b < N; ++b) {
      const auto x = input.plane(b, k);
      const auto dy = grad_out.plane(b, k);
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mu) * is;
      }
    }
    g.gamma[k] = sum_dy_xhat;
    g.beta[k] = sum_dy;
    const T scale = bn.gamma[k] * is;
    for (std::size_t b = 0; b < N; ++b) {
      const auto x = input.plane(b, k);
      const auto dy = grad_out.plane(b, k);
      auto dx = g.input.plane(b, k);
      if (mode == Mode::train) {
        for (std::size_t i = 0; i < HW; ++i) {
          const T xhat = (x[i] - mu) * is;
          dx[i] = scale * (dy[i] - sum_dy / count - xhat * sum_dy_xhat / count);
        }
      } else {
        for (std::size_t i = 0; i < HW; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return g;
}

/// Folds inference-mode batch normalization into the preceding convolution:
/// conv2d_forward(x, fold) == batchnorm_forward(conv2d_forward(x, conv), bn, infer).
template <typename T>
ConvLayer<T> batchnorm_fold(const ConvLayer<T>& conv, const BatchNormLayer<T>& bn) {
  conv.validate();
  validate_batchnorm(bn, conv.out_channels());
  require_running_stats(bn);
  ConvLayer<T> out = conv;
  const std::size_t per = conv.in_channels() * conv.kernel() * conv.kernel();
  for (std::size_t o = 0; o < conv.out_channels(); ++o) {
    const T s = bn.gamma[o] / std::sqrt(bn.running_var[o] + bn.epsilon);
    T* w = out.weights.data() + o * per;
    for (std::size_t i = 0; i < per; ++i) w[i] *= s;
    out.bias[o] = (conv.bias[o] - bn.running_mean[o]) * s + bn.beta[o];
  }
  return out;
}

}  // namespace ffdnet
