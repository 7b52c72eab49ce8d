#include "usb/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "usb/error.hpp"

namespace usb {

static_assert(std::endian::native == std::endian::little, "ubt I/O assumes a little-endian host");

namespace {

constexpr char kTensorMagic[4] = {'U', 'B', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw IoError("unexpected end of stream");
  return v;
}

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Tensor to_tensor(const Field& f) {
  return Tensor{{static_cast<std::uint32_t>(f.height()), static_cast<std::uint32_t>(f.width())},
                f.storage()};
}

Field to_field(const Tensor& t) {
  if (t.dims.size() != 2) throw ShapeMismatch("tensor of rank " + std::to_string(t.dims.size()) + " is not a field");
  return Field(t.dims[0], t.dims[1], t.values);
}

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.values.size() != t.element_count()) throw ShapeMismatch("tensor payload does not match dims");
  out.write(kTensorMagic, 4);
  write_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) write_u32(out, d);
  out.write(reinterpret_cast<const char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError("bad tensor magic");
  Tensor t;
  const std::uint32_t ndim = read_u32(in);
  if (ndim > 8) throw IoError("implausible tensor rank " + std::to_string(ndim));
  t.dims.resize(ndim);
  for (auto& d : t.dims) d = read_u32(in);
  t.values.resize(t.element_count());
  in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  if (!in) throw IoError("truncated tensor payload");
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void save_field(const std::filesystem::path& path, const Field& f) { save_tensor(path, to_tensor(f)); }

Field load_field(const std::filesystem::path& path) { return to_field(load_tensor(path)); }

void save_archive(const std::filesystem::path& path, const char magic[4], std::uint32_t version,
                  const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(magic, 4);
  write_u32(out, version);
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, tensor);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TensorMap load_archive(const std::filesystem::path& path, const char magic[4], std::uint32_t& version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    char got[4];
    in.read(got, 4);
    if (!in || std::memcmp(got, magic, 4) != 0) throw IoError("bad archive magic");
    version = read_u32(in);
    const std::uint32_t count = read_u32(in);
    TensorMap tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t len = read_u32(in);
      if (len > 4096) throw IoError("implausible tensor name length");
      std::string name(len, '\0');
      in.read(name.data(), len);
      tensors.emplace(std::move(name), read_tensor(in));
    }
    return tensors;
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void save_pgm(const std::filesystem::path& path, const Field& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << f.width() << ' ' << f.height() << "\n255\n";
  for (double v : f.values()) {
    const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    out.put(static_cast<char>(static_cast<unsigned char>(scaled)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace usb
