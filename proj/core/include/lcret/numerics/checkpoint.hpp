#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lcret/numerics/tensor.hpp"

namespace lcret {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered collection of named arrays with a versioned little-endian binary form:
///
///   magic "LCRCKPT\0" | u32 version | u64 array count
///   per array: u32 name length | UTF-8 name | u32 rank | u64 extents[rank]
///              | u8 precision (0 = f32, 1 = f64) | raw little-endian payload
class Checkpoint {
 public:
  static constexpr std::array<char, 8> kMagic{'L', 'C', 'R', 'C', 'K', 'P', 'T', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  struct Array {
    std::string name;
    Shape shape;
    Precision precision = Precision::f32;
    std::vector<double> values;
  };

  template <Real T>
  void put(const std::string& name, const Tensor<T>& tensor) {
    put_array(Array{name, tensor.shape(), precision_of<T>(),
                    std::vector<double>(tensor.values().begin(), tensor.values().end())});
  }

  /// Reads an array converting to T; throws FormatError if absent.
  template <Real T>
  Tensor<T> get(const std::string& name) const {
    const Array& a = at(name);
    return Tensor<T>(a.shape, std::vector<T>(a.values.begin(), a.values.end()));
  }

  void put_array(Array array);
  const Array& at(const std::string& name) const;
  bool contains(const std::string& name) const noexcept;
  const std::vector<Array>& arrays() const noexcept { return arrays_; }
  std::size_t size() const noexcept { return arrays_.size(); }

  void write(std::ostream& out) const;
  static Checkpoint read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<Array> arrays_;
};

namespace le {

void put_u8(std::ostream& out, std::uint8_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_i32(std::ostream& out, std::int32_t v);
void put_f32(std::ostream& out, float v);
void put_f64(std::ostream& out, double v);
std::uint8_t get_u8(std::istream& in);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
std::int32_t get_i32(std::istream& in);
float get_f32(std::istream& in);
double get_f64(std::istream& in);

}  // namespace le

}  // namespace lcret
