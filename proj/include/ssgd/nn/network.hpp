// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssgd/nn/layers.hpp"
#include "ssgd/nn/param_set.hpp"
#include "ssgd/nn/tensor.hpp"

namespace ssgd::nn {

enum class Architecture { kMlp, kSmallResnet };

// Desk-scale model description. The seed fixes initialization, so every
// worker constructing from the same spec holds an identical ParamSet.
struct ModelSpec {
  Architecture architecture = Architecture::kMlp;
  Shape input_shape = {1, 8, 8};       // C, H, W of one example
  std::vector<std::size_t> hidden = {64};  // MLP hidden widths
  std::size_t channels = 8;            // small-resnet width
  std::size_t blocks = 1;              // small-resnet residual blocks
  std::size_t classes = 10;
  BnConfig bn;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ForwardResult {
  Tensor logits;
  Tensor probs;
  double loss = 0.0;  // mean cross-entropy; 0 when no labels were given
};

// Layer stack for a ModelSpec. Holds per-call caches for backward, so one
// Network belongs to one worker.
class Network {
 public:
  explicit Network(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  ParamSet init_params() const;

  // `batch` is [N, C, H, W]. Train mode caches activations for backward and
  // (unless BN is frozen) updates BN running statistics in `params`.
  ForwardResult forward(ParamSet& params, const Tensor& batch, std::span<const int> labels, Mode mode);
  // Eval-mode forward; never modifies params.
  ForwardResult evaluate(const ParamSet& params, const Tensor& batch, std::span<const int> labels);

  // Gradient of the mean loss of the last train-mode forward. BN statistic
  // entries come back as zero tensors.
  ParamSet backward(const ParamSet& params);
  // dL/d(batch) from the last backward.
  const Tensor& input_grad() const { return input_grad_; }
  // ReLU activation pattern of the last train-mode forward.
  std::vector<std::uint8_t> relu_mask() const;

 private:
  ModelSpec spec_;
  std::vector<LayerPtr> layers_;
  std::vector<int> labels_;
  Tensor probs_;
  Tensor input_grad_;
  bool ready_for_backward_ = false;
};

}  // namespace ssgd::nn
