// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ssgd::data {

// IDX element type codes (third magic byte).
enum class IdxType : std::uint8_t {
  kU8 = 0x08,
  kI8 = 0x09,
  kI16 = 0x0B,
  kI32 = 0x0C,
  kF32 = 0x0D,
  kF64 = 0x0E,
};

// Decoded IDX array. Values are widened to double; `type` records the
// on-disk element type.
struct IdxArray {
  IdxType type = IdxType::kU8;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t count() const;
};

IdxArray parse_idx(std::span<const std::uint8_t> bytes);
// Big-endian payload as the format requires. Values must fit the type.
std::vector<std::uint8_t> encode_idx(const IdxArray& array);

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

}  // namespace ssgd::data
