#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>

#include "lcret/numerics/tensor.hpp"

namespace lcret {

/// Central-difference gradient of a scalar function:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate i.
template <Real T>
Tensor<T> finite_difference_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
  if (!(eps > T{0})) throw std::invalid_argument("finite_difference_grad: eps must be positive");
  Tensor<T> probe = x;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = f(probe);
    probe[i] = orig - eps;
    const T down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_grad: function returned a non-finite value at coordinate " +
                         std::to_string(i));
    }
    out[i] = (up - down) / (T(2) * eps);
  }
  return out;
}

/// max_i |a_i - b_i| / max(max_i |b_i|, floor): error relative to the scale of
/// the reference `b`.
template <class RangeA, class RangeB>
double max_relative_error(const RangeA& a, const RangeB& b, double floor = 1e-12) {
  if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: length mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / std::max(scale, floor);
}

}  // namespace lcret
