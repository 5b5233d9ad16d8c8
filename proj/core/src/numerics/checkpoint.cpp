#include "lcret/numerics/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

namespace lcret {

namespace le {

namespace {

template <class U>
void put_uint(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, sizeof(U));
}

template <class U>
U get_uint(std::istream& in) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("unexpected end of binary stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void put_u8(std::ostream& out, std::uint8_t v) { put_uint(out, v); }
void put_u32(std::ostream& out, std::uint32_t v) { put_uint(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_uint(out, v); }
void put_i32(std::ostream& out, std::int32_t v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
void put_f32(std::ostream& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::ostream& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }
std::uint8_t get_u8(std::istream& in) { return get_uint<std::uint8_t>(in); }
std::uint32_t get_u32(std::istream& in) { return get_uint<std::uint32_t>(in); }
std::uint64_t get_u64(std::istream& in) { return get_uint<std::uint64_t>(in); }
std::int32_t get_i32(std::istream& in) { return std::bit_cast<std::int32_t>(get_uint<std::uint32_t>(in)); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get_uint<std::uint32_t>(in)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_uint<std::uint64_t>(in)); }

}  // namespace le

void Checkpoint::put_array(Array array) {
  if (shape_numel(array.shape) != array.values.size()) {
    throw ShapeError("checkpoint array '" + array.name + "' has inconsistent shape");
  }
  auto it = std::find_if(arrays_.begin(), arrays_.end(), [&](const Array& a) { return a.name == array.name; });
  if (it != arrays_.end()) {
    *it = std::move(array);
  } else {
    arrays_.push_back(std::move(array));
  }
}

const Checkpoint::Array& Checkpoint::at(const std::string& name) const {
  auto it = std::find_if(arrays_.begin(), arrays_.end(), [&](const Array& a) { return a.name == name; });
  if (it == arrays_.end()) throw FormatError("checkpoint has no array named '" + name + "'");
  return *it;
}

bool Checkpoint::contains(const std::string& name) const noexcept {
  return std::any_of(arrays_.begin(), arrays_.end(), [&](const Array& a) { return a.name == name; });
}

void Checkpoint::write(std::ostream& out) const {
  out.write(kMagic.data(), kMagic.size());
  le::put_u32(out, kVersion);
  le::put_u64(out, arrays_.size());
  for (const auto& a : arrays_) {
    le::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    le::put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto e : a.shape) le::put_u64(out, e);
    le::put_u8(out, static_cast<std::uint8_t>(a.precision));
    for (double v : a.values) {
      if (a.precision == Precision::f32) {
        le::put_f32(out, static_cast<float>(v));
      } else {
        le::put_f64(out, v);
      }
    }
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

Checkpoint Checkpoint::read(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("not a checkpoint (bad magic)");
  const auto version = le::get_u32(in);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = le::get_u64(in);
  Checkpoint ckpt;
  for (std::uint64_t n = 0; n < count; ++n) {
    Array a;
    a.name.resize(le::get_u32(in));
    if (!in.read(a.name.data(), static_cast<std::streamsize>(a.name.size()))) {
      throw FormatError("truncated array name");
    }
    const auto rank = le::get_u32(in);
    if (rank > 16) throw FormatError("array '" + a.name + "' has implausible rank");
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(le::get_u64(in));
    const auto tag = le::get_u8(in);
    if (tag > 1) throw FormatError("array '" + a.name + "' has unknown precision tag");
    a.precision = static_cast<Precision>(tag);
    a.values.resize(shape_numel(a.shape));
    for (auto& v : a.values) v = a.precision == Precision::f32 ? le::get_f32(in) : le::get_f64(in);
    ckpt.put_array(std::move(a));
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write(out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return read(in);
}

}  // namespace lcret
