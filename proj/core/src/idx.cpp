#include "physctl/idx.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "physctl/error.hpp"

namespace physctl {

namespace {

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

template <class T>
T be_value(const std::uint8_t* p) {
  std::uint8_t tmp[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) tmp[i] = p[sizeof(T) - 1 - i];
  T v;
  std::memcpy(&v, tmp, sizeof(T));
  return v;
}

std::size_t element_size(std::uint8_t type) {
  switch (type) {
    case 0x08:
    case 0x09: return 1;
    case 0x0B: return 2;
    case 0x0C:
    case 0x0D: return 4;
    case 0x0E: return 8;
    default: return 0;
  }
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in, const std::filesystem::path& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw FormatError("zlib init failed for " + path.string());
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const auto at = static_cast<long long>(zs.total_in);
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream in " + path.string(), at);
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
    if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
      const auto at = static_cast<long long>(zs.total_in);
      inflateEnd(&zs);
      throw FormatError("truncated gzip stream in " + path.string(), at);
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

Tensor parse_idx(std::span<const std::uint8_t> b) {
  if (b.size() < 4) throw FormatError("IDX header truncated", static_cast<long long>(b.size()));
  if (b[0] != 0 || b[1] != 0) throw FormatError("bad IDX magic: first two bytes must be zero", b[0] != 0 ? 0 : 1);
  const std::uint8_t type = b[2];
  const std::size_t esize = element_size(type);
  if (esize == 0) throw FormatError("unsupported IDX type code " + std::to_string(type), 2);
  const std::size_t rank = b[3];
  if (rank == 0) throw FormatError("IDX rank must be >= 1", 3);
  if (b.size() < 4 + 4 * rank) throw FormatError("IDX extents truncated", static_cast<long long>(b.size()));
  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = be32(b, 4 + 4 * i);
    if (shape[i] == 0) throw FormatError("IDX extent " + std::to_string(i) + " is zero", 4 + 4 * i);
    count *= shape[i];
  }
  const std::size_t start = 4 + 4 * rank;
  if (b.size() - start < count * esize)
    throw FormatError("IDX payload truncated: need " + std::to_string(count * esize) + " bytes, have " +
                          std::to_string(b.size() - start),
                      static_cast<long long>(b.size()));
  Tensor out(shape);
  const std::uint8_t* p = b.data() + start;
  for (std::size_t i = 0; i < count; ++i, p += esize) {
    switch (type) {
      case 0x08: out[i] = p[0] / 255.0; break;
      case 0x09: out[i] = static_cast<std::int8_t>(p[0]); break;
      case 0x0B: out[i] = be_value<std::int16_t>(p); break;
      case 0x0C: out[i] = be_value<std::int32_t>(p); break;
      case 0x0D: out[i] = be_value<float>(p); break;
      case 0x0E: out[i] = be_value<double>(p); break;
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor load_idx(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) bytes = gunzip(bytes, path);
  try {
    return parse_idx(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace physctl
