#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "masd/errors.hpp"
#include "masd/tensor.hpp"

namespace masd {

// Tensor file format, shared project-wide:
//   magic "MAST" | version u8 = 1 | rank u8 | rank x extent u32 LE | data f32 LE row-major
// Round-trips must be bit-exact.

inline constexpr std::uint8_t kTensorFormatVersion = 1;

namespace detail {

inline void put_u32_le(std::ofstream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

inline std::uint32_t get_u32_le(std::ifstream& in, const std::string& path, const char* field) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError(path + ": truncated while reading " + field);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write tensor file: " + path.string());
  out.write("MAST", 4);
  char version = static_cast<char>(kTensorFormatVersion);
  out.put(version);
  if (t.rank() > 255) throw ContractError("tensor rank exceeds format limit");
  out.put(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xFFFFFFFFull) throw ContractError("tensor extent exceeds u32");
    detail::put_u32_le(out, static_cast<std::uint32_t>(d));
  }
  for (float v : t.data()) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file: " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw IoError(path.string() + ": truncated while reading magic");
  if (std::memcmp(magic, "MAST", 4) != 0)
    throw IoError(path.string() + ": bad magic, not a MAST tensor file");
  int version = in.get();
  if (version == EOF) throw IoError(path.string() + ": truncated while reading version");
  if (version != kTensorFormatVersion)
    throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  int rank = in.get();
  if (rank == EOF) throw IoError(path.string() + ": truncated while reading rank");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape)
    d = detail::get_u32_le(in, path.string(), "extents");
  std::size_t n = shape_numel(shape);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i)
    data[i] = std::bit_cast<float>(detail::get_u32_le(in, path.string(), "data"));
  // trailing bytes mean the header lied about the shape
  if (in.peek() != EOF) throw IoError(path.string() + ": trailing bytes after data");
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace masd
