#pragma once

// Loop kernels shared by the graph primitives and the no-gradient code paths.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lcret/numerics/tensor.hpp"

namespace lcret::kernels {

/// C[m x n] += A[m x k] * B[k x n], all row-major.
template <Real T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[m x k] += A[m x n] * B[k x n]^T.
template <Real T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

/// C[k x n] += A[m x k]^T * B[m x n].
template <Real T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      T* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <Real T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

/// Inverse frequencies base^(-2i/head_size) for i < head_size / 2.
std::vector<double> rotary_inv_freq(double base, std::size_t head_size);

/// Rotates each head's (i, i + head_size/2) pair of every row by
/// direction * position * inv_freq[i]. direction = -1 applies the inverse rotation.
template <Real T>
void rotary_rotate(T* data, std::size_t rows, std::size_t width, std::span<const std::size_t> positions,
                   std::span<const double> inv_freq, std::size_t head_size, double direction) {
  const std::size_t half = head_size / 2;
  const std::size_t heads = width / head_size;
  for (std::size_t r = 0; r < rows; ++r) {
    const double pos = static_cast<double>(positions[r]);
    T* row = data + r * width;
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = direction * pos * inv_freq[i];
      const T c = static_cast<T>(std::cos(theta));
      const T s = static_cast<T>(std::sin(theta));
      for (std::size_t h = 0; h < heads; ++h) {
        T& x = row[h * head_size + i];
        T& y = row[h * head_size + i + half];
        const T nx = x * c - y * s;
        const T ny = x * s + y * c;
        x = nx;
        y = ny;
      }
    }
  }
}

template <Real T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <Real T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return cdf + x * pdf;
}

}  // namespace lcret::kernels
