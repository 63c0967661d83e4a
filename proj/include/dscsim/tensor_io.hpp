#pragma once

// Little-endian binary formats (docs/formats.md):
//
//   tensor file  "DSCT" u32 rank, u32 dims[rank] (C,H,W), u8 dtype (0 real64,
//                1 q16), i8 frac_bits (q16 only), payload
//   array record "DSCQ" u32 rank, u32 dims[rank], i8 frac_bits, u64 count,
//                payload of i16

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "dscsim/error.hpp"
#include "dscsim/tensor.hpp"

namespace dscsim {

inline constexpr std::array<char, 4> kTensorMagic{'D', 'S', 'C', 'T'};
inline constexpr std::array<char, 4> kArrayMagic{'D', 'S', 'C', 'Q'};

enum class DType : std::uint8_t { Real64 = 0, Q16 = 1 };

namespace io {

template <typename T>
void put(std::ostream& out, T v) {
  using U = std::make_unsigned_t<std::conditional_t<std::is_same_v<T, double>, std::int64_t, T>>;
  U u;
  if constexpr (std::is_same_v<T, double>)
    u = std::bit_cast<std::uint64_t>(v);
  else
    u = static_cast<U>(v);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

template <typename T>
T get(std::istream& in, const char* what) {
  using U = std::make_unsigned_t<std::conditional_t<std::is_same_v<T, double>, std::int64_t, T>>;
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U)))
    throw ParseError(std::string("truncated binary data while reading ") + what);
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>)
    return std::bit_cast<double>(static_cast<std::uint64_t>(u));
  else
    return static_cast<T>(u);
}

inline void expect_magic(std::istream& in, const std::array<char, 4>& magic) {
  char got[4];
  if (!in.read(got, 4) || std::memcmp(got, magic.data(), 4) != 0)
    throw ParseError("bad magic: expected '" + std::string(magic.data(), 4) + "'");
}

inline std::vector<int> get_dims(std::istream& in) {
  const auto rank = get<std::uint32_t>(in, "rank");
  if (rank == 0 || rank > 8) throw ParseError("unsupported rank " + std::to_string(rank));
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get<std::uint32_t>(in, "dims");
    if (d == 0 || d > (1u << 24)) throw ParseError("invalid dimension " + std::to_string(d));
    dims.push_back(static_cast<int>(d));
  }
  return dims;
}

}  // namespace io

using AnyTensor = std::variant<Tensor, QTensor>;

inline void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic.data(), 4);
  io::put<std::uint32_t>(out, 3);
  for (int d : {t.shape.channels, t.shape.height, t.shape.width}) io::put<std::uint32_t>(out, d);
  io::put<std::uint8_t>(out, static_cast<std::uint8_t>(DType::Real64));
  for (double v : t.data) io::put<double>(out, v);
}

inline void write_tensor(std::ostream& out, const QTensor& t) {
  out.write(kTensorMagic.data(), 4);
  io::put<std::uint32_t>(out, 3);
  for (int d : {t.shape.channels, t.shape.height, t.shape.width}) io::put<std::uint32_t>(out, d);
  io::put<std::uint8_t>(out, static_cast<std::uint8_t>(DType::Q16));
  io::put<std::int8_t>(out, static_cast<std::int8_t>(t.params.frac_bits));
  for (q16 v : t.data) io::put<std::int16_t>(out, v);
}

inline AnyTensor read_tensor(std::istream& in) {
  io::expect_magic(in, kTensorMagic);
  const auto dims = io::get_dims(in);
  if (dims.size() != 3) throw ParseError("feature-map tensors must have rank 3");
  const TensorShape shape{dims[1], dims[2], dims[0]};
  validate_shape(shape);
  const auto dtype = io::get<std::uint8_t>(in, "dtype");
  if (dtype == static_cast<std::uint8_t>(DType::Real64)) {
    Tensor t(shape);
    for (auto& v : t.data) v = io::get<double>(in, "payload");
    return t;
  }
  if (dtype == static_cast<std::uint8_t>(DType::Q16)) {
    QParams p{io::get<std::int8_t>(in, "frac_bits")};
    validate(p);
    QTensor t(shape, p);
    for (auto& v : t.data) v = io::get<std::int16_t>(in, "payload");
    return t;
  }
  throw ParseError("unknown dtype " + std::to_string(dtype));
}

inline void write_array(std::ostream& out, const QArray& a) {
  out.write(kArrayMagic.data(), 4);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
  for (int d : a.dims) io::put<std::uint32_t>(out, d);
  io::put<std::int8_t>(out, static_cast<std::int8_t>(a.params.frac_bits));
  io::put<std::uint64_t>(out, a.data.size());
  for (q16 v : a.data) io::put<std::int16_t>(out, v);
}

inline QArray read_array(std::istream& in) {
  io::expect_magic(in, kArrayMagic);
  QArray a;
  a.dims = io::get_dims(in);
  a.params.frac_bits = io::get<std::int8_t>(in, "frac_bits");
  validate(a.params);
  const auto count = io::get<std::uint64_t>(in, "element count");
  if (count != product(a.dims)) throw ParseError("element count does not match dims");
  a.data.resize(count);
  for (auto& v : a.data) v = io::get<std::int16_t>(in, "payload");
  return a;
}

inline void save_tensor(const std::string& path, const AnyTensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  std::visit([&](const auto& x) { write_tensor(f, x); }, t);
  if (!f) throw IoError("write failed for " + path);
}

inline AnyTensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open tensor file " + path);
  return read_tensor(f);
}

}  // namespace dscsim
