// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "ssgd/data/dataset.hpp"
#include "ssgd/nn/tensor.hpp"

namespace ssgd::data {

enum class CropMode { kRandom, kCenter };

// Scale/aspect-ratio augmentation followed by a crop to the model input.
// The area fraction is relative to the output window.
struct AugmentPolicy {
  bool enabled = true;
  double area_min = 0.08;
  double area_max = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  CropMode crop = CropMode::kRandom;

  void validate() const;
};

// Draws (area, aspect, y, x) from `rng` in that order on every call, so the
// stream position does not depend on the policy. When disabled, or after the
// draws, the window is cut from `src` and bilinearly resized to `out`.
void augment(std::span<const float> src, const Geometry& in, std::span<float> dst, const Geometry& out,
             const AugmentPolicy& policy, std::mt19937_64& rng);

// Deterministic evaluation crop: centered window of the output size.
void center_crop(std::span<const float> src, const Geometry& in, std::span<float> dst, const Geometry& out);

// Per-example stream, keyed by the example's slot in the global batch.
std::mt19937_64 example_rng(std::uint64_t seed, long iter, std::size_t slot);

// Augmented training batch [n, C, H, W] for the given indices. `first_slot`
// is the global-batch position of indices[0].
nn::Tensor make_train_batch(const Dataset& ds, std::span<const std::size_t> indices, const Geometry& out,
                            const AugmentPolicy& policy, bool augmentation_on, std::uint64_t seed, long iter,
                            std::size_t first_slot);

// Center-cropped validation examples [begin, end).
nn::Tensor make_val_batch(const Dataset& ds, std::size_t begin, std::size_t end, const Geometry& out);

}  // namespace ssgd::data
