#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hires {

inline constexpr char kContainerMagic[8] = {'H', 'R', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

/// Binary tensor container:
///   bytes [0, 8)   magic "HRCKPT01"
///   bytes [8, 16)  u64 LE length L of the JSON header
///   bytes [16, 16+L) UTF-8 JSON header; header["tensors"] lists
///                  {name, shape, offset, count} with offsets in bytes from
///                  the start of the data section
///   bytes [16+L, ...) little-endian float32 data
struct Container {
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  [[nodiscard]] const NamedTensor* find(const std::string& name) const;
};

void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace hires
