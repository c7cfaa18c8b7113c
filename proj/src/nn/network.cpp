// SPDX-License-Identifier: Apache-2.0
#include "ssgd/nn/network.hpp"

#include <random>

#include "ssgd/error.hpp"

namespace ssgd::nn {

void ModelSpec::validate() const {
  if (classes < 2) throw ConfigError("model.classes must be at least 2");
  if (input_shape.size() != 3) throw ConfigError("model.input_shape must be [C,H,W]");
  for (auto e : input_shape)
    if (e == 0) throw ConfigError("model.input_shape extents must be positive");
  if (architecture == Architecture::kSmallResnet) {
    if (blocks < 1) throw ConfigError("small-resnet needs at least one residual block");
    if (channels < 1) throw ConfigError("model.channels must be positive");
  } else {
    for (auto h : hidden)
      if (h == 0) throw ConfigError("model.hidden widths must be positive");
  }
  bn.validate();
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t in_features = shape_numel(spec_.input_shape);
  if (spec_.architecture == Architecture::kMlp) {
    std::size_t width = in_features;
    for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
      auto tag = "fc" + std::to_string(i + 1);
      layers_.push_back(std::make_unique<Dense>(tag, width, spec_.hidden[i]));
      layers_.push_back(std::make_unique<BatchNorm>(tag + ".bn", spec_.hidden[i]));
      layers_.push_back(std::make_unique<Relu>(tag + ".relu"));
      width = spec_.hidden[i];
    }
    layers_.push_back(std::make_unique<Dense>("head", width, spec_.classes));
  } else {
    const std::size_t ch = spec_.channels;
    layers_.push_back(std::make_unique<Conv2d>("stem", spec_.input_shape[0], ch, 3));
    layers_.push_back(std::make_unique<BatchNorm>("stem.bn", ch));
    layers_.push_back(std::make_unique<Relu>("stem.relu"));
    for (std::size_t b = 0; b < spec_.blocks; ++b)
      layers_.push_back(std::make_unique<ResidualBlock>("block" + std::to_string(b + 1), ch));
    layers_.push_back(std::make_unique<GlobalAvgPool>("pool"));
    layers_.push_back(std::make_unique<Dense>("head", ch, spec_.classes));
  }
}

ParamSet Network::init_params() const {
  ParamSet params;
  std::mt19937_64 rng(spec_.seed);
  for (const auto& l : layers_) l->init(params, rng, spec_.bn);
  return params;
}

ForwardResult Network::forward(ParamSet& params, const Tensor& batch, std::span<const int> labels,
                               Mode mode) {
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != spec_.input_shape) {
    throw ShapeError("layer 'input': expects [N," + std::to_string(spec_.input_shape[0]) + "," +
                     std::to_string(spec_.input_shape[1]) + "," + std::to_string(spec_.input_shape[2]) +
                     "], got " + shape_str(batch.shape()));
  }
  ready_for_backward_ = false;
  ForwardContext ctx{mode, &spec_.bn};
  Tensor x = batch;
  for (auto& l : layers_) x = l->forward(params, x, ctx);

  ForwardResult res;
  res.logits = std::move(x);
  if (!labels.empty()) {
    auto lr = softmax_cross_entropy(res.logits, labels);
    res.loss = lr.loss;
    res.probs = std::move(lr.probs);
  } else {
    res.probs = softmax(res.logits);
  }
  if (mode == Mode::kTrain && !labels.empty()) {
    labels_.assign(labels.begin(), labels.end());
    probs_ = res.probs;
    ready_for_backward_ = true;
  }
  return res;
}

ForwardResult Network::evaluate(const ParamSet& params, const Tensor& batch, std::span<const int> labels) {
  ParamSet view = params;
  return forward(view, batch, labels, Mode::kEval);
}

ParamSet Network::backward(const ParamSet& params) {
  if (!ready_for_backward_) throw Error("backward called before a train-mode forward with labels");
  ParamSet grads = params.zeros_like();
  Tensor g = softmax_cross_entropy_grad(probs_, labels_);
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(params, g, grads);
  input_grad_ = std::move(g);
  return grads;
}

std::vector<std::uint8_t> Network::relu_mask() const {
  std::vector<std::uint8_t> mask;
  for (const auto& l : layers_) l->append_relu_mask(mask);
  return mask;
}

}  // namespace ssgd::nn
