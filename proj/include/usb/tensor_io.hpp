#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "usb/field.hpp"

namespace usb {

// Raw ".ubt" tensor: magic "UBT1", u32 ndim, u32 dims[ndim], then the
// little-endian f64 payload in row-major order.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

Tensor to_tensor(const Field& f);
Field to_field(const Tensor& t);

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_field(const std::filesystem::path& path, const Field& f);
Field load_field(const std::filesystem::path& path);

// Named tensor collection used by checkpoints: magic, u32 version, u32 count,
// then per entry u32 name length, name bytes and a ".ubt" block.
using TensorMap = std::map<std::string, Tensor>;

void save_archive(const std::filesystem::path& path, const char magic[4], std::uint32_t version,
                  const TensorMap& tensors);
TensorMap load_archive(const std::filesystem::path& path, const char magic[4], std::uint32_t& version);

// 8-bit binary PGM preview; [-1, 1] maps linearly onto [0, 255].
void save_pgm(const std::filesystem::path& path, const Field& f);

}  // namespace usb
