// SPDX-License-Identifier: Apache-2.0
#include "ssgd/data/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ssgd/error.hpp"

namespace ssgd::data {

void AugmentPolicy::validate() const {
  if (!(area_min > 0.0 && area_min <= area_max)) throw ConfigError("augment: need 0 < area_min <= area_max");
  if (!(aspect_min > 0.0 && aspect_min <= aspect_max))
    throw ConfigError("augment: need 0 < aspect_min <= aspect_max");
}

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check(std::span<const float> src, const Geometry& in, std::span<float> dst, const Geometry& out) {
  if (src.size() != in.numel() || dst.size() != out.numel()) throw ShapeError("augment: buffer size mismatch");
  if (in.channels != out.channels) throw ShapeError("augment: channel count mismatch");
  if (out.height > in.height || out.width > in.width)
    throw ShapeError("augment: output " + std::to_string(out.height) + "x" + std::to_string(out.width) +
                     " larger than source " + std::to_string(in.height) + "x" + std::to_string(in.width));
}

// Window [y0, y0+h) x [x0, x0+w) of src resized to out.
void resample(std::span<const float> src, const Geometry& in, std::size_t y0, std::size_t x0, std::size_t h,
              std::size_t w, std::span<float> dst, const Geometry& out) {
  const std::size_t H = in.height, W = in.width;
  if (h == out.height && w == out.width) {
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(src.data() + (c * H + y0 + y) * W + x0, w, dst.data() + (c * out.height + y) * out.width);
    return;
  }
  auto coord = [](std::size_t d, std::size_t n_out, std::size_t n_in) {
    const double s = (d + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n_in - 1));
  };
  for (std::size_t c = 0; c < out.channels; ++c)
    for (std::size_t y = 0; y < out.height; ++y) {
      const double sy = coord(y, out.height, h);
      const auto iy = static_cast<std::size_t>(sy);
      const std::size_t iy1 = std::min(iy + 1, h - 1);
      const double fy = sy - iy;
      for (std::size_t x = 0; x < out.width; ++x) {
        const double sx = coord(x, out.width, w);
        const auto ix = static_cast<std::size_t>(sx);
        const std::size_t ix1 = std::min(ix + 1, w - 1);
        const double fx = sx - ix;
        auto at = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(src[(c * H + y0 + yy) * W + x0 + xx]);
        };
        const double v = (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix1)) +
                         fy * ((1 - fx) * at(iy1, ix) + fx * at(iy1, ix1));
        dst[(c * out.height + y) * out.width + x] = static_cast<float>(v);
      }
    }
}

}  // namespace

void augment(std::span<const float> src, const Geometry& in, std::span<float> dst, const Geometry& out,
             const AugmentPolicy& policy, std::mt19937_64& rng) {
  check(src, in, dst, out);
  const double us = unit(rng), ur = unit(rng), uy = unit(rng), ux = unit(rng);
  double area = 1.0, aspect = 1.0;
  if (policy.enabled) {
    area = policy.area_min + (policy.area_max - policy.area_min) * us;
    aspect = policy.aspect_min + (policy.aspect_max - policy.aspect_min) * ur;
  }
  auto side = [](double base, double f, std::size_t limit) {
    const auto v = static_cast<long>(std::lround(static_cast<double>(base) * f));
    return static_cast<std::size_t>(std::clamp<long>(v, 1, static_cast<long>(limit)));
  };
  const std::size_t h = side(static_cast<double>(out.height), std::sqrt(area / aspect), in.height);
  const std::size_t w = side(static_cast<double>(out.width), std::sqrt(area * aspect), in.width);
  std::size_t y0, x0;
  if (policy.crop == CropMode::kCenter) {
    y0 = (in.height - h) / 2;
    x0 = (in.width - w) / 2;
  } else {
    y0 = std::min(static_cast<std::size_t>(uy * static_cast<double>(in.height - h + 1)), in.height - h);
    x0 = std::min(static_cast<std::size_t>(ux * static_cast<double>(in.width - w + 1)), in.width - w);
  }
  resample(src, in, y0, x0, h, w, dst, out);
}

void center_crop(std::span<const float> src, const Geometry& in, std::span<float> dst, const Geometry& out) {
  check(src, in, dst, out);
  resample(src, in, (in.height - out.height) / 2, (in.width - out.width) / 2, out.height, out.width, dst, out);
}

std::mt19937_64 example_rng(std::uint64_t seed, long iter, std::size_t slot) {
  const auto it = static_cast<std::uint64_t>(iter);
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(it), static_cast<std::uint32_t>(it >> 32),
                   static_cast<std::uint32_t>(slot), 0xA06u};
  return std::mt19937_64(sq);
}

nn::Tensor make_train_batch(const Dataset& ds, std::span<const std::size_t> indices, const Geometry& out,
                            const AugmentPolicy& policy, bool augmentation_on, std::uint64_t seed, long iter,
                            std::size_t first_slot) {
  if (indices.empty()) throw ConfigError("empty training batch");
  AugmentPolicy p = policy;
  p.enabled = policy.enabled && augmentation_on;
  nn::Tensor batch({indices.size(), out.channels, out.height, out.width});
  const std::size_t px = out.numel();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto rng = example_rng(seed, iter, first_slot + i);
    augment(ds.train_image(indices[i]), ds.geometry(), std::span<float>(batch.data() + i * px, px), out, p, rng);
  }
  return batch;
}

nn::Tensor make_val_batch(const Dataset& ds, std::size_t begin, std::size_t end, const Geometry& out) {
  if (begin >= end || end > ds.n_val()) throw ConfigError("validation range out of bounds");
  nn::Tensor batch({end - begin, out.channels, out.height, out.width});
  const std::size_t px = out.numel();
  for (std::size_t i = begin; i < end; ++i)
    center_crop(ds.val_image(i), ds.geometry(), std::span<float>(batch.data() + (i - begin) * px, px), out);
  return batch;
}

}  // namespace ssgd::data
