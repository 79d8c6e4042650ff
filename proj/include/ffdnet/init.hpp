#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ffdnet/error.hpp"
#include "ffdnet/rng.hpp"
#include "ffdnet/tensor.hpp"

namespace ffdnet {

namespace detail {

// Thin Householder QR of a column-major rows x cols matrix (rows >= cols).
// Returns Q (rows x cols, column-major) with the sign of each column chosen so
// that diag(R) > 0, which makes Q Haar-distributed for Gaussian input.
inline std::vector<double> householder_q(std::vector<double> a, std::size_t rows,
                                         std::size_t cols) {
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[j * rows + i]; };
  std::vector<std::vector<double>> reflectors(cols);
  std::vector<double> rdiag(cols);

  for (std::size_t j = 0; j < cols; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < rows; ++i) norm += A(i, j) * A(i, j);
    norm = std::sqrt(norm);
    const double alpha = A(j, j) >= 0.0 ? -norm : norm;
    rdiag[j] = alpha;
    std::vector<double> v(rows - j);
    for (std::size_t i = j; i < rows; ++i) v[i - j] = A(i, j);
    v[0] -= alpha;
    double vnorm = 0.0;
    for (double x : v) vnorm += x * x;
    vnorm = std::sqrt(vnorm);
    if (vnorm > 0.0)
      for (double& x : v) x /= vnorm;
    for (std::size_t k = j; k < cols; ++k) {
      double dot = 0.0;
      for (std::size_t i = j; i < rows; ++i) dot += v[i - j] * A(i, k);
      for (std::size_t i = j; i < rows; ++i) A(i, k) -= 2.0 * v[i - j] * dot;
    }
    reflectors[j] = std::move(v);
  }

  // Q = H_0 H_1 ... H_{cols-1} applied to the first cols columns of I.
  std::vector<double> q(rows * cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) q[j * rows + j] = 1.0;
  for (std::size_t jj = cols; jj-- > 0;) {
    const auto& v = reflectors[jj];
    for (std::size_t k = 0; k < cols; ++k) {
      double dot = 0.0;
      for (std::size_t i = jj; i < rows; ++i) dot += v[i - jj] * q[k * rows + i];
      for (std::size_t i = jj; i < rows; ++i) q[k * rows + i] -= 2.0 * v[i - jj] * dot;
    }
  }
  for (std::size_t j = 0; j < cols; ++j)
    if (rdiag[j] < 0.0)
      for (std::size_t i = 0; i < rows; ++i) q[j * rows + i] = -q[j * rows + i];
  return q;
}

}  // namespace detail

/// Filter bank whose flattened (out, in*k*k) matrix W has orthonormal rows
/// (out <= in*k*k) or orthonormal columns (otherwise), scaled by gain.
template <typename T>
Tensor4<T> orthogonal_init(Shape4 shape, double gain, CounterRng& rng) {
  require(shape.n >= 1 && shape.c * shape.h * shape.w >= 1,
          "orthogonal_init: degenerate filter shape " + shape.str());
  const std::size_t out = shape.n, fan = shape.c * shape.h * shape.w;
  const std::size_t rows = std::max(out, fan), cols = std::min(out, fan);
  std::vector<double> g(rows * cols);
  for (double& x : g) x = rng.normal();
  const std::vector<double> q = detail::householder_q(std::move(g), rows, cols);

  Tensor4<T> w(shape);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t f = 0; f < fan; ++f) {
      // out <= fan: W = Q^T, so W[o][f] = Q[f][o]; otherwise W = Q.
      const double v = out <= fan ? q[o * rows + f] : q[f * rows + o];
      w[o * fan + f] = static_cast<T>(gain * v);
    }
  return w;
}

}  // namespace ffdnet
