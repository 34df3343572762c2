#pragma once

// Minimal binary tensor container, bit-exact across platforms.
//
// Layout (all little-endian):
//   bytes 0-3   magic "UPST"
//   bytes 4-5   format version, u16, currently 1
//   byte  6     dtype: 0=f32, 1=f64, 2=u32, 3=u16, 4=u8
//   byte  7     ndim
//   next        ndim x u32 dims
//   rest        row-major payload, exactly product(dims) * sizeof(dtype)
//
// Readers reject unknown magic/version/dtype, truncated payloads, and
// trailing bytes. Float payloads round-trip bitwise.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "evpan/core.hpp"
#include "evpan/grid.hpp"

namespace evpan {

enum class Dtype : std::uint8_t { kF32 = 0, kF64 = 1, kU32 = 2, kU16 = 3, kU8 = 4 };

inline std::size_t dtype_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
    case Dtype::kU32: return 4;
    case Dtype::kU16: return 2;
    case Dtype::kU8: return 1;
  }
  throw IoError("tensor: unknown dtype code " +
                std::to_string(static_cast<unsigned>(dtype)));
}

struct RawTensor {
  Dtype dtype = Dtype::kF64;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline constexpr char kTensorMagic[4] = {'U', 'P', 'S', 'T'};
inline constexpr std::uint16_t kTensorVersion = 1;

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8)
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int shift = 0; shift < 64; shift += 8)
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

inline void write_raw_tensor(const std::string& path, const RawTensor& tensor) {
  if (tensor.dims.empty()) throw ValidationError("tensor write: no dimensions: " + path);
  for (std::uint32_t d : tensor.dims)
    if (d == 0) throw ValidationError("tensor write: zero-sized dimension: " + path);
  if (tensor.dims.size() > 255)
    throw ValidationError("tensor write: too many dimensions: " + path);
  if (tensor.payload.size() != tensor.element_count() * dtype_size(tensor.dtype))
    throw ValidationError("tensor write: payload size does not match dims: " + path);

  std::vector<std::uint8_t> bytes;
  bytes.reserve(8 + 4 * tensor.dims.size() + tensor.payload.size());
  for (char c : detail::kTensorMagic) bytes.push_back(static_cast<std::uint8_t>(c));
  detail::put_u16(bytes, detail::kTensorVersion);
  bytes.push_back(static_cast<std::uint8_t>(tensor.dtype));
  bytes.push_back(static_cast<std::uint8_t>(tensor.dims.size()));
  for (std::uint32_t d : tensor.dims) detail::put_u32(bytes, d);
  bytes.insert(bytes.end(), tensor.payload.begin(), tensor.payload.end());

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("tensor write: cannot open " + path);
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("tensor write: write failed for " + path);
}

inline RawTensor read_raw_tensor(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("tensor read: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                  std::istreambuf_iterator<char>());
  if (file.bad()) throw IoError("tensor read: read failed for " + path);

  if (bytes.size() < 8) throw IoError("tensor read: truncated header in " + path);
  for (int i = 0; i < 4; ++i)
    if (bytes[i] != static_cast<std::uint8_t>(detail::kTensorMagic[i]))
      throw IoError("tensor read: bad magic in " + path);
  const std::uint16_t version = detail::get_u16(bytes.data() + 4);
  if (version != detail::kTensorVersion)
    throw IoError("tensor read: unsupported version " + std::to_string(version) + " in " + path);
  const std::uint8_t dtype_code = bytes[6];
  if (dtype_code > static_cast<std::uint8_t>(Dtype::kU8))
    throw IoError("tensor read: unknown dtype " + std::to_string(dtype_code) + " in " + path);
  const std::size_t ndim = bytes[7];
  if (ndim == 0) throw IoError("tensor read: zero dimensions in " + path);
  if (bytes.size() < 8 + 4 * ndim)
    throw IoError("tensor read: truncated dimension table in " + path);

  RawTensor tensor;
  tensor.dtype = static_cast<Dtype>(dtype_code);
  std::uint64_t elements = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = detail::get_u32(bytes.data() + 8 + 4 * i);
    if (d == 0) throw IoError("tensor read: zero-sized dimension in " + path);
    tensor.dims.push_back(d);
    elements *= d;
    if (elements > (std::uint64_t{1} << 40))
      throw IoError("tensor read: implausible element count in " + path);
  }
  const std::size_t expected = elements * dtype_size(tensor.dtype);
  const std::size_t header = 8 + 4 * ndim;
  if (bytes.size() < header + expected)
    throw IoError("tensor read: truncated payload in " + path);
  if (bytes.size() > header + expected)
    throw IoError("tensor read: trailing bytes in " + path);
  tensor.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return tensor;
}

// Dense float grid, written with dims (H, W, C).
inline void write_dense_grid(const std::string& path, const DenseGrid& grid,
                             Dtype dtype = Dtype::kF64) {
  if (dtype != Dtype::kF32 && dtype != Dtype::kF64)
    throw ValidationError("tensor write: dense grids require a float dtype: " + path);
  RawTensor tensor;
  tensor.dtype = dtype;
  tensor.dims = {static_cast<std::uint32_t>(grid.height), static_cast<std::uint32_t>(grid.width),
                 static_cast<std::uint32_t>(grid.channels)};
  tensor.payload.reserve(grid.size() * dtype_size(dtype));
  for (double v : grid.data) {
    if (dtype == Dtype::kF64) {
      detail::put_u64(tensor.payload, std::bit_cast<std::uint64_t>(v));
    } else {
      detail::put_u32(tensor.payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  write_raw_tensor(path, tensor);
}

// Reads a 2-D (H, W) or 3-D (H, W, C) float tensor as a DenseGrid.
inline DenseGrid read_dense_grid(const std::string& path) {
  const RawTensor tensor = read_raw_tensor(path);
  if (tensor.dims.size() != 2 && tensor.dims.size() != 3)
    throw ValidationError("tensor read: expected 2 or 3 dims for a dense grid in " + path);
  if (tensor.dtype != Dtype::kF32 && tensor.dtype != Dtype::kF64)
    throw ValidationError("tensor read: expected a float dtype for a dense grid in " + path);
  const std::size_t channels = tensor.dims.size() == 3 ? tensor.dims[2] : 1;
  DenseGrid grid(tensor.dims[0], tensor.dims[1], channels);
  const std::uint8_t* p = tensor.payload.data();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (tensor.dtype == Dtype::kF64) {
      grid.data[i] = std::bit_cast<double>(detail::get_u64(p));
      p += 8;
    } else {
      grid.data[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32(p)));
      p += 4;
    }
  }
  return grid;
}

inline void write_panoptic_grid(const std::string& path, const PanopticGrid& grid) {
  RawTensor tensor;
  tensor.dtype = Dtype::kU32;
  tensor.dims = {static_cast<std::uint32_t>(grid.height), static_cast<std::uint32_t>(grid.width)};
  tensor.payload.reserve(grid.pixels() * 4);
  for (std::uint32_t v : grid.data) detail::put_u32(tensor.payload, v);
  write_raw_tensor(path, tensor);
}

inline PanopticGrid read_panoptic_grid(const std::string& path) {
  const RawTensor tensor = read_raw_tensor(path);
  if (tensor.dims.size() != 2)
    throw ValidationError("tensor read: expected 2 dims for a panoptic grid in " + path);
  PanopticGrid grid(tensor.dims[0], tensor.dims[1]);
  const std::uint8_t* p = tensor.payload.data();
  for (std::size_t i = 0; i < grid.pixels(); ++i) {
    switch (tensor.dtype) {
      case Dtype::kU32:
        grid.data[i] = detail::get_u32(p);
        p += 4;
        break;
      case Dtype::kU16:
        grid.data[i] = detail::get_u16(p);
        p += 2;
        break;
      case Dtype::kU8:
        grid.data[i] = *p;
        p += 1;
        break;
      default:
        throw ValidationError("tensor read: expected an integer dtype for a panoptic grid in " +
                              path);
    }
  }
  return grid;
}

}  // namespace evpan
