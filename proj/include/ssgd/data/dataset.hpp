// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ssgd::data {

struct Geometry {
  std::size_t channels = 1;
  std::size_t height = 10;
  std::size_t width = 10;

  std::size_t numel() const { return channels * height * width; }
  friend bool operator==(const Geometry&, const Geometry&) = default;
};

// In-memory labeled image set, train and validation splits, CHW float pixels.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Geometry geometry, std::size_t classes, std::vector<float> train_x, std::vector<int> train_y,
          std::vector<float> val_x, std::vector<int> val_y);

  const Geometry& geometry() const { return geometry_; }
  std::size_t classes() const { return classes_; }
  std::size_t n_train() const { return train_y_.size(); }
  std::size_t n_val() const { return val_y_.size(); }

  std::span<const float> train_image(std::size_t i) const;
  std::span<const float> val_image(std::size_t i) const;
  int train_label(std::size_t i) const { return train_y_.at(i); }
  int val_label(std::size_t i) const { return val_y_.at(i); }

  const std::vector<float>& train_pixels() const { return train_x_; }
  const std::vector<int>& train_labels() const { return train_y_; }
  const std::vector<float>& val_pixels() const { return val_x_; }
  const std::vector<int>& val_labels() const { return val_y_; }

 private:
  Geometry geometry_;
  std::size_t classes_ = 0;
  std::vector<float> train_x_, val_x_;
  std::vector<int> train_y_, val_y_;
};

// Gaussian clusters around smooth per-class prototype images. Each class has
// `modes_per_class` prototypes; `noise` is the per-pixel standard deviation
// relative to unit-variance prototypes and sets the class overlap.
struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t n_train = 4096;
  std::size_t n_val = 1024;
  Geometry geometry{1, 10, 10};
  std::size_t modes_per_class = 2;
  double noise = 1.0;
  double label_noise = 0.0;  // fraction of training labels replaced at random
  std::uint64_t seed = 1;

  void validate() const;
};

Dataset make_synthetic(const SyntheticSpec& spec);

// Directory with train-images.idx, train-labels.idx, val-images.idx and
// val-labels.idx. Images are [n, h, w] or [n, c, h, w]; u8 pixels are scaled
// to [0, 1], float pixels are taken as-is. `classes` 0 means max label + 1.
Dataset load_idx_dataset(const std::filesystem::path& dir, std::size_t classes = 0);
// Writes float32 images and u8 labels in the layout load_idx_dataset reads.
void save_idx_dataset(const Dataset& ds, const std::filesystem::path& dir);

// One global minibatch: `indices` into the training set, split into `shards`
// of equal size, shard k holding positions [k*b, (k+1)*b).
struct GlobalBatch {
  std::vector<std::size_t> indices;
  std::size_t n_shards = 1;

  std::size_t local_batch() const { return indices.size() / n_shards; }
  std::span<const std::size_t> shard(std::size_t k) const;
};

// Iterations per epoch for a given global batch (the partial tail is dropped).
long iters_per_epoch(std::size_t n_train, std::size_t global_batch);

// Draws the batch for `iter` from a per-epoch permutation fixed by `seed`.
// Throws ConfigError when global_batch is not divisible by n_shards or
// exceeds the training set.
GlobalBatch sample_global_batch(std::size_t n_train, long iter, std::size_t global_batch, std::size_t n_shards,
                                std::uint64_t seed);

}  // namespace ssgd::data
