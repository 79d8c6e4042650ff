#pragma once

#include <cstddef>
#include <string>

#include "ffdnet/error.hpp"
#include "ffdnet/tensor.hpp"

namespace ffdnet {

// Reversible downsampling and its inverse (sub-pixel upsampling).
//
// Channel ordering: output channel c * f * f + i * f + j of space_to_depth holds
// the sub-image of source channel c made of pixels at rows == i and columns == j
// (mod f). Both operations are pure permutations, so each one's gradient is the
// other one applied to the incoming gradient.

template <typename T>
Tensor4<T> space_to_depth(const Tensor4<T>& input, std::size_t factor = 2) {
  require(factor >= 1, "space_to_depth: factor must be positive");
  require(input.height() % factor == 0 && input.width() % factor == 0,
          "space_to_depth: spatial size " + std::to_string(input.height()) + "x" +
              std::to_string(input.width()) + " not divisible by " + std::to_string(factor) +
              " (pad first)");
  const std::size_t N = input.batch(), C = input.channels(), f = factor;
  const std::size_t Ho = input.height() / f, Wo = input.width() / f;
  Tensor4<T> out(N, C * f * f, Ho, Wo);
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < f; ++j) {
          const std::size_t oc = (c * f + i) * f + j;
          for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t x = 0; x < Wo; ++x) out(b, oc, y, x) = input(b, c, y * f + i, x * f + j);
        }
  return out;
}

template <typename T>
Tensor4<T> depth_to_space(const Tensor4<T>& input, std::size_t factor = 2) {
  require(factor >= 1, "depth_to_space: factor must be positive");
  const std::size_t f = factor;
  require(input.channels() % (f * f) == 0,
          "depth_to_space: " + std::to_string(input.channels()) + " channels not divisible by " +
              std::to_string(f * f));
  const std::size_t N = input.batch(), C = input.channels() / (f * f);
  const std::size_t Hi = input.height(), Wi = input.width();
  Tensor4<T> out(N, C, Hi * f, Wi * f);
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < f; ++j) {
          const std::size_t ic = (c * f + i) * f + j;
          for (std::size_t y = 0; y < Hi; ++y)
            for (std::size_t x = 0; x < Wi; ++x) out(b, c, y * f + i, x * f + j) = input(b, ic, y, x);
        }
  return out;
}

}  // namespace ffdnet
