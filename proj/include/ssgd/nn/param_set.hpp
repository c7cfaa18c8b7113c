// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ssgd/nn/tensor.hpp"

namespace ssgd::nn {

// Role byte as written to disk.
enum class ParamRole : std::uint8_t {
  kWeight = 0,       // trainable, weight decay applies
  kBnAffine = 1,     // trainable BN scale/shift; decay is opt-in
  kBnStatistic = 2,  // running mean/variance, never touched by the optimizer
};

inline bool is_trainable(ParamRole r) { return r != ParamRole::kBnStatistic; }

struct ParamEntry {
  std::string name;
  ParamRole role = ParamRole::kWeight;
  Tensor value;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Ordered name -> tensor collection. Insertion order is the iteration order,
// so replicas built from the same ModelSpec agree on layout.
class ParamSet {
 public:
  Tensor& add(std::string name, ParamRole role, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const ParamEntry& entry(std::size_t i) const { return entries_[i]; }
  ParamEntry& entry(std::size_t i) { return entries_[i]; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t total_scalars() const;
  std::size_t trainable_scalars() const;

  // Zero-filled copy with identical layout (used for gradients and velocity).
  ParamSet zeros_like() const;

  // Concatenate trainable entries, in order, into one buffer; and the inverse.
  std::vector<float> flatten_trainable() const;
  void unflatten_trainable(std::span<const float> flat);

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Binary format, all integers little-endian:
//   u32 magic "SSPS", u32 version, u64 entry count, then per entry
//   u32 name length, name bytes, u8 role, u32 rank, u64 extents[rank],
//   f32 values[numel].
inline constexpr std::uint32_t kParamMagic = 0x53505353;  // "SSPS"
inline constexpr std::uint32_t kParamVersion = 1;

std::vector<std::uint8_t> serialize(const ParamSet& params);
ParamSet deserialize(std::span<const std::uint8_t> bytes);

void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);

// Largest |a - b| over all entries; throws ShapeError on layout mismatch.
float max_abs_diff(const ParamSet& a, const ParamSet& b);

}  // namespace ssgd::nn
