#include "lcret/numerics/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace lcret {

std::string_view precision_name(Precision p) noexcept {
  return p == Precision::f32 ? "f32" : "f64";
}

Precision parse_precision(std::string_view name) {
  if (name == "f32" || name == "32" || name == "float") return Precision::f32;
  if (name == "f64" || name == "64" || name == "double") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + std::string(name) + "' (expected f32 or f64)");
}

std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <Real T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T{0}) {}

template <Real T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

template <Real T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <Real T>
Tensor<T> Tensor<T>::normal(Shape shape, T stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.data_) v = static_cast<T>(dist(rng));
  return t;
}

template <Real T>
std::size_t Tensor<T>::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

template <Real T>
std::size_t Tensor<T>::rows() const noexcept {
  if (shape_.size() < 2) return data_.empty() ? 0 : 1;
  return shape_[0];
}

template <Real T>
std::size_t Tensor<T>::cols() const noexcept {
  if (shape_.empty()) return data_.size();
  if (shape_.size() == 1) return shape_[0];
  return shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

template <Real T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <Real T>
std::span<T> Tensor<T>::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T{0});
  return grad_;
}

template <Real T>
void Tensor<T>::zero_grad() {
  grad_.assign(data_.size(), T{0});
}

template <Real T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <Real T>
void require_finite(std::span<const T> values, std::string_view op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value produced by " + std::string(op) + " at element " +
                         std::to_string(i));
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void require_finite<float>(std::span<const float>, std::string_view);
template void require_finite<double>(std::span<const double>, std::string_view);

}  // namespace lcret
