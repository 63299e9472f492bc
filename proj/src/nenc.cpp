#include "brainenc/nenc.hpp"

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

namespace brainenc::data {

namespace {

template <typename U>
void put_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

template <typename U>
bool get_le(std::istream& in, U& value) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return true;
}

}  // namespace

std::size_t nenc_header_bytes(std::size_t rank) { return 16 + 8 * rank; }

void write_array(std::ostream& out, const nd::Tensor<float>& array) {
  if (array.empty() || array.size() == 0) throw ArgumentError("write_array: array must be non-empty");
  if (array.rank() > kNencMaxRank) throw ArgumentError("write_array: rank exceeds " + std::to_string(kNencMaxRank));
  out.write(kNencMagic, 4);
  put_le<std::uint32_t>(out, kNencVersion);
  put_le<std::uint32_t>(out, kNencFloat32);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(array.rank()));
  for (auto d : array.shape()) put_le<std::uint64_t>(out, d);
  for (float v : array.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
}

nd::Tensor<float> read_array(std::istream& in, const std::string& what) {
  auto corrupt = [&](const std::string& msg) { return CorruptContainerError(what + ": " + msg); };
  char magic[4];
  if (!in.read(magic, 4)) throw corrupt("truncated header");
  if (std::memcmp(magic, kNencMagic, 4) != 0) throw corrupt("bad magic bytes");
  std::uint32_t version = 0, dtype = 0, rank = 0;
  if (!get_le(in, version) || !get_le(in, dtype) || !get_le(in, rank)) throw corrupt("truncated header");
  if (version != kNencVersion) throw corrupt("unsupported format version " + std::to_string(version));
  if (dtype != kNencFloat32) throw corrupt("unsupported dtype code " + std::to_string(dtype));
  if (rank == 0 || rank > kNencMaxRank) throw corrupt("invalid rank " + std::to_string(rank));
  nd::Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    std::uint64_t dim = 0;
    if (!get_le(in, dim)) throw corrupt("truncated header");
    if (dim == 0) throw corrupt("zero-sized dimension");
    if (count > std::numeric_limits<std::uint32_t>::max() / dim) throw corrupt("element count overflows");
    count *= dim;
    d = static_cast<std::size_t>(dim);
  }
  // Read in blocks so a corrupt header cannot force one huge allocation.
  constexpr std::size_t kBlock = 1 << 16;
  std::vector<float> payload;
  std::vector<unsigned char> block;
  for (std::size_t done = 0; done < count;) {
    const std::size_t n = std::min<std::size_t>(kBlock, static_cast<std::size_t>(count) - done);
    block.resize(n * 4);
    if (!in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size())))
      throw corrupt("truncated payload");
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(block[4 * i]) | static_cast<std::uint32_t>(block[4 * i + 1]) << 8 |
                                 static_cast<std::uint32_t>(block[4 * i + 2]) << 16 |
                                 static_cast<std::uint32_t>(block[4 * i + 3]) << 24;
      payload.push_back(std::bit_cast<float>(bits));
    }
    done += n;
  }
  return nd::Tensor<float>(std::move(shape), std::move(payload));
}

void write_array(const std::filesystem::path& path, const nd::Tensor<float>& array) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_array(out, array);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

nd::Tensor<float> read_array(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("missing file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto array = read_array(in, path.string());
  if (in.peek() != std::ifstream::traits_type::eof())
    throw CorruptContainerError(path.string() + ": trailing bytes after payload");
  return array;
}

}  // namespace brainenc::data
