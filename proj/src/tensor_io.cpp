#include "aia/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "aia/error.hpp"

namespace aia {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated stream reading u32");
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated stream reading u64");
  return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  write_u32(os, kTensorVersion);
  write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.data().size_bytes()));
  if (!os) throw IoError("failed writing tensor");
}

static Tensor read_after_magic(std::istream& is) {
  const auto version = read_u32(is);
  if (version != kTensorVersion) throw IoError("unsupported AIAT version " + std::to_string(version));
  const auto ndim = read_u32(is);
  if (ndim == 0 || ndim > 8) throw IoError("implausible AIAT rank " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& d : shape) d = read_u64(is);
  std::vector<double> values(shape_numel(shape));
  if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
    throw IoError("truncated AIAT payload for shape " + shape_to_string(shape));
  }
  return Tensor::from(std::move(shape), std::move(values));
}

std::optional<Tensor> try_read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() == 0 && is.eof()) return std::nullopt;
  if (is.gcount() != 4 || std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError("bad AIAT magic");
  return read_after_magic(is);
}

Tensor read_tensor(std::istream& is) {
  auto t = try_read_tensor(is);
  if (!t) throw IoError("unexpected end of stream before AIAT tensor");
  return *std::move(t);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace aia
