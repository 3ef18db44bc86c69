#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "aia/tensor.hpp"

namespace aia {

// AIAT framing: "AIAT", u32 version (1), u32 ndim, ndim x u64 dims, then the
// row-major payload as little-endian f64.
inline constexpr char kTensorMagic[4] = {'A', 'I', 'A', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
// Returns nullopt on a clean end of stream (no bytes left before the magic).
std::optional<Tensor> try_read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Little-endian scalar helpers shared by the other binary formats.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);

}  // namespace aia
