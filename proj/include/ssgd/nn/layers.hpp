// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssgd/nn/param_set.hpp"
#include "ssgd/nn/tensor.hpp"

namespace ssgd::nn {

enum class Mode { kTrain, kEval };

struct BnConfig {
  double beta = 0.95;  // weight on the previous running statistic
  double epsilon = 1e-5;
  float gamma_init_final_block = 0.0f;
  // Normalize with the running statistics in train mode as well, and leave
  // them untouched. Makes the loss separable across examples.
  bool frozen_statistics = false;

  void validate() const;
};

// S_t = (1 - beta) * Y_t + beta * S_{t-1}, elementwise.
Tensor bn_update_running(const Tensor& stat, const Tensor& batch_value, double beta);

struct ForwardContext {
  Mode mode = Mode::kTrain;
  const BnConfig* bn = nullptr;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }

  // Adds this layer's entries to `params` with seeded initial values.
  virtual void init(ParamSet& params, std::mt19937_64& rng, const BnConfig& bn) const = 0;
  // Train-mode BN forward updates running statistics in `params`.
  virtual Tensor forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) = 0;
  // Accumulates parameter gradients into `grads`; returns dL/dx.
  virtual Tensor backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) = 0;
  // Active/inactive flag of every ReLU unit in the last train-mode forward.
  virtual void append_relu_mask(std::vector<std::uint8_t>&) const {}

 protected:
  std::string name_;
};

using LayerPtr = std::unique_ptr<Layer>;

// y = x W^T + b over [N, in] (higher-rank inputs are flattened per row).
class Dense : public Layer {
 public:
  Dense(std::string name, std::size_t in, std::size_t out);
  void init(ParamSet& params, std::mt19937_64& rng, const BnConfig& bn) const override;
  Tensor forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) override;

 private:
  std::size_t in_, out_;
  Tensor x_;
  Shape x_shape_;
};

// Square-kernel convolution, stride 1, zero "same" padding, no bias.
class Conv2d : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel);
  void init(ParamSet& params, std::mt19937_64& rng, const BnConfig& bn) const override;
  Tensor forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) override;

 private:
  std::size_t in_ch_, out_ch_, k_;
  Tensor x_;
};

// Per-channel batch normalization over [N, C] or [N, C, H, W].
class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, std::size_t channels, bool final_in_block = false);
  void init(ParamSet& params, std::mt19937_64& rng, const BnConfig& bn) const override;
  Tensor forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) override;

 private:
  std::size_t channels_;
  bool final_in_block_;
  bool batch_stats_ = false;  // whether the cached forward normalized with batch statistics
  Tensor xhat_;
  std::vector<double> inv_std_;
};

class Relu : public Layer {
 public:
  using Layer::Layer;
  void init(ParamSet&, std::mt19937_64&, const BnConfig&) const override {}
  Tensor forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) override;
  void append_relu_mask(std::vector<std::uint8_t>& out) const override;

 private:
  Tensor y_;
};

// [N, C, H, W] -> [N, C]
class GlobalAvgPool : public Layer {
 public:
  using Layer::Layer;
  void init(ParamSet&, std::mt19937_64&, const BnConfig&) const override {}
  Tensor forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) override;

 private:
  Shape x_shape_;
};

// relu(x + bn2(conv2(relu(bn1(conv1(x)))))). The second BN is the block's
// final BN and takes its scale init from BnConfig::gamma_init_final_block.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(std::string name, std::size_t channels);
  void init(ParamSet& params, std::mt19937_64& rng, const BnConfig& bn) const override;
  Tensor forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) override;
  void append_relu_mask(std::vector<std::uint8_t>& out) const override;

 private:
  Conv2d conv1_;
  BatchNorm bn1_;
  Relu relu1_;
  Conv2d conv2_;
  BatchNorm bn2_;
  Tensor out_;
};

struct LossResult {
  double loss = 0.0;  // mean cross-entropy
  Tensor probs;       // softmax, [N, C]
};

// Softmax cross-entropy with integer labels. Throws ShapeError on label range
// or count mismatch.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// d(mean loss)/d(logits) given the probabilities from softmax_cross_entropy.
Tensor softmax_cross_entropy_grad(const Tensor& probs, std::span<const int> labels);

Tensor softmax(const Tensor& logits);

}  // namespace ssgd::nn
