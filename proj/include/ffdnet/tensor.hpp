#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ffdnet/error.hpp"

namespace ffdnet {

// Precision used by the command line tools and the service. Tests and
// gradient checks always instantiate the templates with double.
#ifdef FFDNET_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

struct Shape4 {
  std::size_t n = 0;  // batch
  std::size_t c = 0;  // channels
  std::size_t h = 0;  // height
  std::size_t w = 0;  // width

  std::size_t size() const { return n * c * h * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense 4-axis array in (batch, channel, height, width) order.
///
/// Storage is row-major over that axis order, so element (b, k, y, x) lives at
/// linear index ((b * C + k) * H + y) * W + x.
template <typename T>
class Tensor4 {
public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 s, T fill = T(0)) : shape_(s), data_(s.size(), fill) {}
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}
  Tensor4(Shape4 s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
    require(data_.size() == s.size(), "Tensor4: data length " + std::to_string(data_.size()) +
                                          " does not match shape " + s.str());
  }

  const Shape4& shape() const { return shape_; }
  std::size_t batch() const { return shape_.n; }
  std::size_t channels() const { return shape_.c; }
  std::size_t height() const { return shape_.h; }
  std::size_t width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t b, std::size_t k, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + k) * shape_.h + y) * shape_.w + x;
  }

  T& operator()(std::size_t b, std::size_t k, std::size_t y, std::size_t x) {
    return data_[index(b, k, y, x)];
  }
  const T& operator()(std::size_t b, std::size_t k, std::size_t y, std::size_t x) const {
    return data_[index(b, k, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Contiguous H*W plane of one (sample, channel) pair.
  std::span<T> plane(std::size_t b, std::size_t k) {
    return {data_.data() + index(b, k, 0, 0), shape_.h * shape_.w};
  }
  std::span<const T> plane(std::size_t b, std::size_t k) const {
    return {data_.data() + index(b, k, 0, 0), shape_.h * shape_.w};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

private:
  Shape4 shape_{};
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor4<To> tensor_cast(const Tensor4<From>& t) {
  std::vector<To> out(t.size());
  std::transform(t.values().begin(), t.values().end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return Tensor4<To>(t.shape(), std::move(out));
}

// Copy of samples [first, first+count) along the batch axis.
template <typename T>
Tensor4<T> slice_batch(const Tensor4<T>& t, std::size_t first, std::size_t count) {
  require(first + count <= t.batch(), "slice_batch: range outside batch");
  Shape4 s = t.shape();
  s.n = count;
  const std::size_t per = s.c * s.h * s.w;
  std::vector<T> out(t.values().begin() + first * per, t.values().begin() + (first + count) * per);
  return Tensor4<T>(s, std::move(out));
}

}  // namespace ffdnet
