#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lcret {

/// Storage precision of a tensor or checkpoint array.
enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

template <Real T>
constexpr Precision precision_of() noexcept {
  return std::same_as<T, float> ? Precision::f32 : Precision::f64;
}

std::string_view precision_name(Precision p) noexcept;
Precision parse_precision(std::string_view name);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Raised when an operation produces a non-finite value. The message names
/// the producing operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array with an optional gradient buffer of identical shape.
///
/// Most graph operations treat tensors as matrices: rank-1 tensors are a single
/// row, and tensors of rank > 2 are viewed as (extent(0), product of the rest).
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor full(Shape shape, T value);
  static Tensor normal(Shape shape, T stddev, std::mt19937_64& rng);
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  /// Returns the scalar held by a one-element tensor.
  T item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  bool has_grad() const noexcept { return !grad_.empty() || data_.empty(); }
  /// Allocates a zero gradient if none is present.
  std::span<T> grad();
  std::span<const T> grad() const noexcept { return grad_; }
  void zero_grad();
  void clear_grad() noexcept { grad_.clear(); }

  /// Reinterprets the extents; the element count must not change.
  Tensor reshaped(Shape shape) const;

  template <Real U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

/// Throws NumericError naming `op` when any value is NaN or infinite.
template <Real T>
void require_finite(std::span<const T> values, std::string_view op);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace lcret
