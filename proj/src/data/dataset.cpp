// SPDX-License-Identifier: Apache-2.0
#include "ssgd/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "ssgd/data/idx.hpp"
#include "ssgd/error.hpp"

namespace ssgd::data {

Dataset::Dataset(Geometry geometry, std::size_t classes, std::vector<float> train_x, std::vector<int> train_y,
                 std::vector<float> val_x, std::vector<int> val_y)
    : geometry_(geometry),
      classes_(classes),
      train_x_(std::move(train_x)),
      val_x_(std::move(val_x)),
      train_y_(std::move(train_y)),
      val_y_(std::move(val_y)) {
  const std::size_t px = geometry_.numel();
  if (px == 0) throw ConfigError("dataset: empty image geometry");
  if (classes_ < 2) throw ConfigError("dataset: need at least 2 classes");
  if (train_x_.size() != train_y_.size() * px || val_x_.size() != val_y_.size() * px)
    throw FormatError("dataset: pixel count does not match label count");
  auto check = [&](const std::vector<int>& ys, const char* split) {
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (ys[i] < 0 || static_cast<std::size_t>(ys[i]) >= classes_)
        throw FormatError(std::string("dataset: ") + split + " label " + std::to_string(ys[i]) + " at " +
                          std::to_string(i) + " outside [0, " + std::to_string(classes_) + ")");
  };
  check(train_y_, "train");
  check(val_y_, "val");
}

std::span<const float> Dataset::train_image(std::size_t i) const {
  if (i >= n_train()) throw ConfigError("dataset: train index out of range");
  return {train_x_.data() + i * geometry_.numel(), geometry_.numel()};
}

std::span<const float> Dataset::val_image(std::size_t i) const {
  if (i >= n_val()) throw ConfigError("dataset: val index out of range");
  return {val_x_.data() + i * geometry_.numel(), geometry_.numel()};
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic: classes must be at least 2");
  if (n_train == 0 || n_val == 0) throw ConfigError("synthetic: n_train and n_val must be positive");
  if (geometry.numel() == 0) throw ConfigError("synthetic: empty geometry");
  if (modes_per_class == 0) throw ConfigError("synthetic: modes_per_class must be positive");
  if (!(noise >= 0.0)) throw ConfigError("synthetic: noise must be non-negative");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw ConfigError("synthetic: label_noise must be in [0, 1]");
}

namespace {

// Smooth zero-mean unit-variance random image.
std::vector<float> prototype(const Geometry& g, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> img(g.numel());
  for (auto& v : img) v = nd(rng);
  const long h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> out(img.size(), 0.0);
    for (std::size_t c = 0; c < g.channels; ++c)
      for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
          double s = 0.0;
          int n = 0;
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
              const long yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              s += img[(c * h + yy) * w + xx];
              ++n;
            }
          out[(c * h + y) * w + x] = s / n;
        }
    img.swap(out);
  }
  const double mean = std::accumulate(img.begin(), img.end(), 0.0) / img.size();
  double var = 0.0;
  for (double v : img) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / img.size());
  std::vector<float> res(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) res[i] = static_cast<float>((img[i] - mean) / (sd > 0 ? sd : 1.0));
  return res;
}

void draw_split(const SyntheticSpec& s, const std::vector<std::vector<float>>& protos, std::size_t n,
                std::mt19937_64& rng, std::vector<float>& x, std::vector<int>& y) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t px = s.geometry.numel();
  x.resize(n * px);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % s.classes;  // balanced
    const std::size_t mode = (rng() >> 11) % s.modes_per_class;
    const auto& p = protos[cls * s.modes_per_class + mode];
    for (std::size_t j = 0; j < px; ++j) x[i * px + j] = static_cast<float>(p[j] + s.noise * nd(rng));
    y[i] = static_cast<int>(cls);
  }
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<float>> protos;
  for (std::size_t k = 0; k < spec.classes * spec.modes_per_class; ++k) protos.push_back(prototype(spec.geometry, rng));

  std::vector<float> tx, vx;
  std::vector<int> ty, vy;
  std::mt19937_64 train_rng(spec.seed * 0x9E3779B97F4A7C15ull + 1);
  std::mt19937_64 val_rng(spec.seed * 0x9E3779B97F4A7C15ull + 2);
  draw_split(spec, protos, spec.n_train, train_rng, tx, ty);
  draw_split(spec, protos, spec.n_val, val_rng, vx, vy);

  if (spec.label_noise > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> c(0, static_cast<int>(spec.classes) - 1);
    for (auto& label : ty)
      if (u(train_rng) < spec.label_noise) label = c(train_rng);
  }
  return Dataset(spec.geometry, spec.classes, std::move(tx), std::move(ty), std::move(vx), std::move(vy));
}

namespace {

struct Images {
  Geometry g;
  std::size_t n;
  std::vector<float> px;
};

Images images_from(const IdxArray& a, const std::string& what) {
  Images im;
  if (a.dims.size() == 3) {
    im.g = {1, a.dims[1], a.dims[2]};
  } else if (a.dims.size() == 4) {
    im.g = {a.dims[1], a.dims[2], a.dims[3]};
  } else {
    throw FormatError(what + ": images must be rank 3 or 4");
  }
  im.n = a.dims[0];
  const double scale = a.type == IdxType::kU8 ? 1.0 / 255.0 : 1.0;
  im.px.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) im.px[i] = static_cast<float>(a.values[i] * scale);
  return im;
}

std::vector<int> labels_from(const IdxArray& a, const std::string& what) {
  if (a.dims.size() != 1) throw FormatError(what + ": labels must be rank 1");
  std::vector<int> y(a.values.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = a.values[i];
    if (v != std::floor(v) || v < 0) throw FormatError(what + ": labels must be non-negative integers");
    y[i] = static_cast<int>(v);
  }
  return y;
}

}  // namespace

Dataset load_idx_dataset(const std::filesystem::path& dir, std::size_t classes) {
  auto tr = images_from(read_idx(dir / "train-images.idx"), "train-images.idx");
  auto va = images_from(read_idx(dir / "val-images.idx"), "val-images.idx");
  auto ty = labels_from(read_idx(dir / "train-labels.idx"), "train-labels.idx");
  auto vy = labels_from(read_idx(dir / "val-labels.idx"), "val-labels.idx");
  if (!(tr.g == va.g)) throw FormatError("idx dataset: train and val geometry differ");
  if (tr.n != ty.size() || va.n != vy.size()) throw FormatError("idx dataset: image and label counts differ");
  if (classes == 0) {
    int mx = 0;
    for (int v : ty) mx = std::max(mx, v);
    for (int v : vy) mx = std::max(mx, v);
    classes = static_cast<std::size_t>(mx) + 1;
  }
  return Dataset(tr.g, classes, std::move(tr.px), std::move(ty), std::move(va.px), std::move(vy));
}

void save_idx_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& g = ds.geometry();
  auto images = [&](const std::vector<float>& px, std::size_t n) {
    IdxArray a;
    a.type = IdxType::kF32;
    a.dims = {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(g.channels),
              static_cast<std::uint32_t>(g.height), static_cast<std::uint32_t>(g.width)};
    a.values.assign(px.begin(), px.end());
    return a;
  };
  auto labels = [](const std::vector<int>& y) {
    IdxArray a;
    a.type = IdxType::kU8;
    a.dims = {static_cast<std::uint32_t>(y.size())};
    a.values.assign(y.begin(), y.end());
    return a;
  };
  write_idx(dir / "train-images.idx", images(ds.train_pixels(), ds.n_train()));
  write_idx(dir / "train-labels.idx", labels(ds.train_labels()));
  write_idx(dir / "val-images.idx", images(ds.val_pixels(), ds.n_val()));
  write_idx(dir / "val-labels.idx", labels(ds.val_labels()));
}

std::span<const std::size_t> GlobalBatch::shard(std::size_t k) const {
  if (k >= n_shards) throw ConfigError("shard index out of range");
  const std::size_t b = local_batch();
  return {indices.data() + k * b, b};
}

long iters_per_epoch(std::size_t n_train, std::size_t global_batch) {
  if (global_batch == 0 || global_batch > n_train)
    throw ConfigError("global batch " + std::to_string(global_batch) + " does not fit a training set of " +
                      std::to_string(n_train));
  return static_cast<long>(n_train / global_batch);
}

GlobalBatch sample_global_batch(std::size_t n_train, long iter, std::size_t global_batch, std::size_t n_shards,
                                std::uint64_t seed) {
  if (n_shards == 0 || global_batch % n_shards != 0)
    throw ConfigError("global batch " + std::to_string(global_batch) + " is not divisible by " +
                      std::to_string(n_shards) + " workers");
  if (iter < 0) throw ConfigError("negative iteration");
  const long ipe = iters_per_epoch(n_train, global_batch);
  const auto epoch = static_cast<std::uint64_t>(iter / ipe);
  const auto pos = static_cast<std::size_t>(iter % ipe);

  std::vector<std::size_t> perm(n_train);
  std::iota(perm.begin(), perm.end(), 0);
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5EEDu};
  std::mt19937_64 rng(sq);
  std::shuffle(perm.begin(), perm.end(), rng);

  GlobalBatch gb;
  gb.n_shards = n_shards;
  gb.indices.assign(perm.begin() + pos * global_batch, perm.begin() + (pos + 1) * global_batch);
  return gb;
}

}  // namespace ssgd::data
