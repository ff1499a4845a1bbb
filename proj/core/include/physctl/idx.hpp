#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "physctl/tensor.hpp"

namespace physctl {

// IDX (big-endian): 00 00 <type> <rank>, rank u32 extents, payload.
// Unsigned-byte payloads are scaled to [0,1]; other numeric types are
// converted as-is. Errors carry the byte offset.
Tensor parse_idx(std::span<const std::uint8_t> bytes);

// Reads a plain or gzip-compressed IDX file.
Tensor load_idx(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace physctl
