#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "physctl/tensor.hpp"

namespace physctl {

// PCT1 layout, little-endian throughout:
//   "PCT1" | u16 version | u32 count |
//   count x { u16 name length | name | u32 rank | rank x u32 extent | u8 type | data }
// type 0 stores f32, 1 stores f64.
enum class ElementType : std::uint8_t { F32 = 0, F64 = 1 };

struct ContainerEntry {
  std::string name;
  Tensor value;
  ElementType type = ElementType::F64;
};

inline constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_container(std::span<const ContainerEntry> entries);
std::vector<ContainerEntry> decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, std::span<const ContainerEntry> entries);
std::vector<ContainerEntry> read_container(const std::filesystem::path& path);

// Entry lookup by name; throws FormatError when absent.
const ContainerEntry& find_entry(std::span<const ContainerEntry> entries, const std::string& name);

}  // namespace physctl
