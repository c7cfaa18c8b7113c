// SPDX-License-Identifier: Apache-2.0
#include "ssgd/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "ssgd/error.hpp"

namespace ssgd::nn {

void BnConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("bn.beta must lie in [0,1]");
  if (!(epsilon > 0.0)) throw ConfigError("bn.epsilon must be positive");
}

Tensor bn_update_running(const Tensor& stat, const Tensor& batch_value, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("moving-average fraction must lie in [0,1]");
  if (stat.shape() != batch_value.shape())
    throw ShapeError("bn_update_running: " + shape_str(stat.shape()) + " vs " +
                     shape_str(batch_value.shape()));
  Tensor out(stat.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>((1.0 - beta) * batch_value[i] + beta * stat[i]);
  return out;
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = static_cast<float>(dist(rng));
  return t;
}

void require(bool ok, const std::string& layer, const std::string& what) {
  if (!ok) throw ShapeError("layer '" + layer + "': " + what);
}

void require_cached(const Tensor& cache, const std::string& layer) {
  if (cache.empty()) throw Error("layer '" + layer + "': backward called without a train-mode forward");
}

}  // namespace

// ---- Dense ----

Dense::Dense(std::string name, std::size_t in, std::size_t out)
    : Layer(std::move(name)), in_(in), out_(out) {}

void Dense::init(ParamSet& params, std::mt19937_64& rng, const BnConfig&) const {
  params.add(name_ + ".weight", ParamRole::kWeight, he_normal({out_, in_}, in_, rng));
  params.add(name_ + ".bias", ParamRole::kWeight, Tensor({out_}, 0.0f));
}

Tensor Dense::forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) {
  require(x.rank() >= 2, name_, "expects a batched input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  require(x.size() / n == in_, name_,
          "expects " + std::to_string(in_) + " features per row, got " + shape_str(x.shape()));
  const auto& w = params.at(name_ + ".weight");
  const auto& b = params.at(name_ + ".bias");
  Tensor y({n, out_});
  for (std::size_t r = 0; r < n; ++r) {
    const float* xr = x.data() + r * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      const float* wo = w.data() + o * in_;
      double acc = b[o];
      for (std::size_t i = 0; i < in_; ++i) acc += static_cast<double>(xr[i]) * wo[i];
      y[r * out_ + o] = static_cast<float>(acc);
    }
  }
  if (ctx.mode == Mode::kTrain) {
    x_ = x;
    x_shape_ = x.shape();
  } else {
    x_ = Tensor();
  }
  return y;
}

Tensor Dense::backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) {
  require_cached(x_, name_);
  const std::size_t n = x_.dim(0);
  require(dy.size() == n * out_, name_, "gradient shape " + shape_str(dy.shape()));
  const auto& w = params.at(name_ + ".weight");
  auto& dw = grads.at(name_ + ".weight");
  auto& db = grads.at(name_ + ".bias");
  for (std::size_t o = 0; o < out_; ++o) {
    double bacc = 0.0;
    for (std::size_t r = 0; r < n; ++r) bacc += dy[r * out_ + o];
    db[o] += static_cast<float>(bacc);
    for (std::size_t i = 0; i < in_; ++i) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += static_cast<double>(dy[r * out_ + o]) * x_[r * in_ + i];
      dw[o * in_ + i] += static_cast<float>(acc);
    }
  }
  Tensor dx(x_shape_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < in_; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out_; ++o) acc += static_cast<double>(dy[r * out_ + o]) * w[o * in_ + i];
      dx[r * in_ + i] = static_cast<float>(acc);
    }
  }
  return dx;
}

// ---- Conv2d ----

Conv2d::Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel)
    : Layer(std::move(name)), in_ch_(in_ch), out_ch_(out_ch), k_(kernel) {
  if (k_ % 2 == 0) throw ConfigError("layer '" + name_ + "': kernel size must be odd");
}

void Conv2d::init(ParamSet& params, std::mt19937_64& rng, const BnConfig&) const {
  params.add(name_ + ".weight", ParamRole::kWeight,
             he_normal({out_ch_, in_ch_, k_, k_}, in_ch_ * k_ * k_, rng));
}

Tensor Conv2d::forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) {
  require(x.rank() == 4 && x.dim(1) == in_ch_, name_,
          "expects [N," + std::to_string(in_ch_) + ",H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const long pad = static_cast<long>(k_ / 2);
  const auto& w = params.at(name_ + ".weight");
  Tensor y({n, out_ch_, h, wd});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < out_ch_; ++co)
      for (std::size_t oh = 0; oh < h; ++oh)
        for (std::size_t ow = 0; ow < wd; ++ow) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < in_ch_; ++ci)
            for (std::size_t kh = 0; kh < k_; ++kh) {
              long ih = static_cast<long>(oh + kh) - pad;
              if (ih < 0 || ih >= static_cast<long>(h)) continue;
              for (std::size_t kw = 0; kw < k_; ++kw) {
                long iw = static_cast<long>(ow + kw) - pad;
                if (iw < 0 || iw >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x[((b * in_ch_ + ci) * h + ih) * wd + iw]) *
                       w[((co * in_ch_ + ci) * k_ + kh) * k_ + kw];
              }
            }
          y[((b * out_ch_ + co) * h + oh) * wd + ow] = static_cast<float>(acc);
        }
  x_ = ctx.mode == Mode::kTrain ? x : Tensor();
  return y;
}

Tensor Conv2d::backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) {
  require_cached(x_, name_);
  const std::size_t n = x_.dim(0), h = x_.dim(2), wd = x_.dim(3);
  require(dy.shape() == Shape({n, out_ch_, h, wd}), name_, "gradient shape " + shape_str(dy.shape()));
  const long pad = static_cast<long>(k_ / 2);
  const auto& w = params.at(name_ + ".weight");
  auto& dw = grads.at(name_ + ".weight");

  for (std::size_t co = 0; co < out_ch_; ++co)
    for (std::size_t ci = 0; ci < in_ch_; ++ci)
      for (std::size_t kh = 0; kh < k_; ++kh)
        for (std::size_t kw = 0; kw < k_; ++kw) {
          double acc = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t oh = 0; oh < h; ++oh) {
              long ih = static_cast<long>(oh + kh) - pad;
              if (ih < 0 || ih >= static_cast<long>(h)) continue;
              for (std::size_t ow = 0; ow < wd; ++ow) {
                long iw = static_cast<long>(ow + kw) - pad;
                if (iw < 0 || iw >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(dy[((b * out_ch_ + co) * h + oh) * wd + ow]) *
                       x_[((b * in_ch_ + ci) * h + ih) * wd + iw];
              }
            }
          dw[((co * in_ch_ + ci) * k_ + kh) * k_ + kw] += static_cast<float>(acc);
        }

  Tensor dx(x_.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < in_ch_; ++ci)
      for (std::size_t ih = 0; ih < h; ++ih)
        for (std::size_t iw = 0; iw < wd; ++iw) {
          double acc = 0.0;
          for (std::size_t co = 0; co < out_ch_; ++co)
            for (std::size_t kh = 0; kh < k_; ++kh) {
              long oh = static_cast<long>(ih) + pad - static_cast<long>(kh);
              if (oh < 0 || oh >= static_cast<long>(h)) continue;
              for (std::size_t kw = 0; kw < k_; ++kw) {
                long ow = static_cast<long>(iw) + pad - static_cast<long>(kw);
                if (ow < 0 || ow >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(dy[((b * out_ch_ + co) * h + oh) * wd + ow]) *
                       w[((co * in_ch_ + ci) * k_ + kh) * k_ + kw];
              }
            }
          dx[((b * in_ch_ + ci) * h + ih) * wd + iw] = static_cast<float>(acc);
        }
  return dx;
}

// ---- BatchNorm ----

BatchNorm::BatchNorm(std::string name, std::size_t channels, bool final_in_block)
    : Layer(std::move(name)), channels_(channels), final_in_block_(final_in_block) {}

void BatchNorm::init(ParamSet& params, std::mt19937_64&, const BnConfig& bn) const {
  float gamma = final_in_block_ ? bn.gamma_init_final_block : 1.0f;
  params.add(name_ + ".gamma", ParamRole::kBnAffine, Tensor({channels_}, gamma));
  params.add(name_ + ".beta", ParamRole::kBnAffine, Tensor({channels_}, 0.0f));
  params.add(name_ + ".running_mean", ParamRole::kBnStatistic, Tensor({channels_}, 0.0f));
  params.add(name_ + ".running_var", ParamRole::kBnStatistic, Tensor({channels_}, 1.0f));
}

Tensor BatchNorm::forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) {
  require((x.rank() == 2 || x.rank() == 4) && x.dim(1) == channels_, name_,
          "expects [N," + std::to_string(channels_) + "] or [N," + std::to_string(channels_) +
              ",H,W], got " + shape_str(x.shape()));
  if (ctx.bn == nullptr) throw Error("layer '" + name_ + "': missing BN configuration");
  const auto& cfg = *ctx.bn;
  const std::size_t n = x.dim(0);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const double m = static_cast<double>(n * spatial);
  const auto& gamma = params.at(name_ + ".gamma");
  const auto& beta = params.at(name_ + ".beta");
  auto& rmean = params.at(name_ + ".running_mean");
  auto& rvar = params.at(name_ + ".running_var");

  const bool use_batch = ctx.mode == Mode::kTrain && !cfg.frozen_statistics;
  std::vector<double> mean(channels_), inv_std(channels_);
  if (use_batch) {
    Tensor bmean({channels_}), bvar({channels_});
    for (std::size_t c = 0; c < channels_; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < spatial; ++p) s += x[(b * channels_ + c) * spatial + p];
      mean[c] = s / m;
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < spatial; ++p) {
          double d = x[(b * channels_ + c) * spatial + p] - mean[c];
          v += d * d;
        }
      v /= m;  // biased
      inv_std[c] = 1.0 / std::sqrt(v + cfg.epsilon);
      bmean[c] = static_cast<float>(mean[c]);
      bvar[c] = static_cast<float>(v);
    }
    rmean = bn_update_running(rmean, bmean, cfg.beta);
    rvar = bn_update_running(rvar, bvar, cfg.beta);
  } else {
    for (std::size_t c = 0; c < channels_; ++c) {
      mean[c] = rmean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(rvar[c]) + cfg.epsilon);
    }
  }

  Tensor y(x.shape());
  Tensor xhat(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < channels_; ++c)
      for (std::size_t p = 0; p < spatial; ++p) {
        std::size_t i = (b * channels_ + c) * spatial + p;
        double xh = (x[i] - mean[c]) * inv_std[c];
        xhat[i] = static_cast<float>(xh);
        y[i] = static_cast<float>(gamma[c] * xh + beta[c]);
      }
  if (ctx.mode == Mode::kTrain) {
    xhat_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
    batch_stats_ = use_batch;
  } else {
    xhat_ = Tensor();
  }
  return y;
}

Tensor BatchNorm::backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) {
  require_cached(xhat_, name_);
  require(dy.shape() == xhat_.shape(), name_, "gradient shape " + shape_str(dy.shape()));
  const std::size_t n = xhat_.dim(0);
  const std::size_t spatial = xhat_.rank() == 4 ? xhat_.dim(2) * xhat_.dim(3) : 1;
  const double m = static_cast<double>(n * spatial);
  const auto& gamma = params.at(name_ + ".gamma");
  auto& dgamma = grads.at(name_ + ".gamma");
  auto& dbeta = grads.at(name_ + ".beta");

  Tensor dx(dy.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < spatial; ++p) {
        std::size_t i = (b * channels_ + c) * spatial + p;
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xhat_[i];
      }
    dgamma[c] += static_cast<float>(sum_dy_xhat);
    dbeta[c] += static_cast<float>(sum_dy);
    const double scale = gamma[c] * inv_std_[c];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < spatial; ++p) {
        std::size_t i = (b * channels_ + c) * spatial + p;
        double g = batch_stats_ ? scale / m * (m * dy[i] - sum_dy - xhat_[i] * sum_dy_xhat)
                                : scale * dy[i];
        dx[i] = static_cast<float>(g);
      }
  }
  return dx;
}

// ---- Relu ----

Tensor Relu::forward(ParamSet&, const Tensor& x, const ForwardContext& ctx) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  y_ = ctx.mode == Mode::kTrain ? y : Tensor();
  return y;
}

Tensor Relu::backward(const ParamSet&, const Tensor& dy, ParamSet&) {
  require_cached(y_, name_);
  require(dy.shape() == y_.shape(), name_, "gradient shape " + shape_str(dy.shape()));
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y_[i] > 0.0f ? dy[i] : 0.0f;
  return dx;
}

void Relu::append_relu_mask(std::vector<std::uint8_t>& out) const {
  for (float v : y_.values()) out.push_back(v > 0.0f);
}

// ---- GlobalAvgPool ----

Tensor GlobalAvgPool::forward(ParamSet&, const Tensor& x, const ForwardContext& ctx) {
  require(x.rank() == 4, name_, "expects [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < s; ++p) acc += x[i * s + p];
    y[i] = static_cast<float>(acc / static_cast<double>(s));
  }
  x_shape_ = ctx.mode == Mode::kTrain ? x.shape() : Shape{};
  return y;
}

Tensor GlobalAvgPool::backward(const ParamSet&, const Tensor& dy, ParamSet&) {
  if (x_shape_.empty()) throw Error("layer '" + name_ + "': backward called without a train-mode forward");
  const std::size_t s = x_shape_[2] * x_shape_[3];
  require(dy.size() * s == shape_numel(x_shape_), name_, "gradient shape " + shape_str(dy.shape()));
  Tensor dx(x_shape_);
  const float inv = 1.0f / static_cast<float>(s);
  for (std::size_t i = 0; i < dy.size(); ++i)
    for (std::size_t p = 0; p < s; ++p) dx[i * s + p] = dy[i] * inv;
  return dx;
}

// ---- ResidualBlock ----

ResidualBlock::ResidualBlock(std::string name, std::size_t channels)
    : Layer(name),
      conv1_(name + ".conv1", channels, channels, 3),
      bn1_(name + ".bn1", channels),
      relu1_(name + ".relu1"),
      conv2_(name + ".conv2", channels, channels, 3),
      bn2_(name + ".bn2", channels, /*final_in_block=*/true) {}

void ResidualBlock::init(ParamSet& params, std::mt19937_64& rng, const BnConfig& bn) const {
  conv1_.init(params, rng, bn);
  bn1_.init(params, rng, bn);
  conv2_.init(params, rng, bn);
  bn2_.init(params, rng, bn);
}

Tensor ResidualBlock::forward(ParamSet& params, const Tensor& x, const ForwardContext& ctx) {
  Tensor h = conv1_.forward(params, x, ctx);
  h = bn1_.forward(params, h, ctx);
  h = relu1_.forward(params, h, ctx);
  h = conv2_.forward(params, h, ctx);
  h = bn2_.forward(params, h, ctx);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    float s = x[i] + h[i];
    out[i] = s > 0.0f ? s : 0.0f;
  }
  out_ = ctx.mode == Mode::kTrain ? out : Tensor();
  return out;
}

Tensor ResidualBlock::backward(const ParamSet& params, const Tensor& dy, ParamSet& grads) {
  require_cached(out_, name_);
  Tensor dsum(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dsum[i] = out_[i] > 0.0f ? dy[i] : 0.0f;
  Tensor g = bn2_.backward(params, dsum, grads);
  g = conv2_.backward(params, g, grads);
  g = relu1_.backward(params, g, grads);
  g = bn1_.backward(params, g, grads);
  g = conv1_.backward(params, g, grads);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += dsum[i];
  return g;
}

void ResidualBlock::append_relu_mask(std::vector<std::uint8_t>& out) const {
  relu1_.append_relu_mask(out);
  for (float v : out_.values()) out.push_back(v > 0.0f);
}

// ---- loss ----

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,C] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const float* z = logits.data() + r * c;
    float zmax = *std::max_element(z, z + c);
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += std::exp(static_cast<double>(z[k]) - zmax);
    for (std::size_t k = 0; k < c; ++k)
      p[r * c + k] = static_cast<float>(std::exp(static_cast<double>(z[k]) - zmax) / denom);
  }
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("loss expects [N,C] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  LossResult res;
  res.probs = softmax(logits);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ShapeError("loss: label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
    const float* z = logits.data() + r * c;
    float zmax = *std::max_element(z, z + c);
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += std::exp(static_cast<double>(z[k]) - zmax);
    total += std::log(denom) - (static_cast<double>(z[y]) - zmax);
  }
  res.loss = total / static_cast<double>(n);
  return res;
}

Tensor softmax_cross_entropy_grad(const Tensor& probs, std::span<const int> labels) {
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  Tensor g(probs.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      double t = (static_cast<std::size_t>(labels[r]) == k) ? 1.0 : 0.0;
      g[r * c + k] = static_cast<float>((probs[r * c + k] - t) * inv_n);
    }
  return g;
}

}  // namespace ssgd::nn
