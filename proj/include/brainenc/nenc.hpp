#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "brainenc/ndiff/tensor.hpp"

namespace brainenc::data {

// NENC array container, all integers little-endian:
//   "NENC" | u32 version (1) | u32 dtype (1 = float32) | u32 ndim |
//   ndim x u64 dims | row-major float32 payload
inline constexpr char kNencMagic[4] = {'N', 'E', 'N', 'C'};
inline constexpr std::uint32_t kNencVersion = 1;
inline constexpr std::uint32_t kNencFloat32 = 1;
inline constexpr std::uint32_t kNencMaxRank = 8;

std::size_t nenc_header_bytes(std::size_t rank);

void write_array(std::ostream& out, const nd::Tensor<float>& array);
/// Reads one array; `what` names the source in error messages.
nd::Tensor<float> read_array(std::istream& in, const std::string& what);

void write_array(const std::filesystem::path& path, const nd::Tensor<float>& array);
/// Reads a whole file. Trailing bytes after the payload are rejected.
nd::Tensor<float> read_array(const std::filesystem::path& path);

}  // namespace brainenc::data
