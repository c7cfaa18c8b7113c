// SPDX-License-Identifier: Apache-2.0
#include "ssgd/optim/sgd.hpp"

#include <cmath>
#include <string>

#include "ssgd/error.hpp"

namespace ssgd::optim {

void SgdConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
}

MomentumSgd::MomentumSgd(SgdConfig cfg, sched::ScheduleSpec lr, sched::ScheduleSpec wd)
    : cfg_(cfg), lr_(std::move(lr)), wd_(std::move(wd)) {
  cfg_.validate();
  if (lr_.total_iters() != wd_.total_iters())
    throw ConfigError("lr and weight-decay schedules differ in length");
}

void MomentumSgd::step(nn::ParamSet& params, const nn::ParamSet& grads, long iter) {
  step_with(params, grads, lr_.at(iter), wd_.at(iter), iter);
}

void MomentumSgd::step_with(nn::ParamSet& params, const nn::ParamSet& grads, double lr, double wd,
                            long iter) {
  if (grads.size() != params.size()) throw ShapeError("optimizer: gradient set does not match parameters");
  if (!has_velocity_) {
    velocity_ = params.zeros_like();
    has_velocity_ = true;
  }
  if (velocity_.size() != params.size()) throw ShapeError("optimizer: parameter layout changed");

  for (std::size_t e = 0; e < params.size(); ++e) {
    const auto& g = grads.entry(e);
    if (g.name != params.entry(e).name || g.value.shape() != params.entry(e).value.shape())
      throw ShapeError("optimizer: gradient entry '" + g.name + "' does not match '" +
                       params.entry(e).name + "'");
    if (is_trainable(g.role) && !g.value.all_finite())
      throw DivergenceError("non-finite gradient in '" + g.name + "' at iteration " + std::to_string(iter),
                            iter);
  }

  const double corr = prev_lr_ > 0.0 ? lr / prev_lr_ : 1.0;
  const double m = cfg_.momentum * corr;
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto& p = params.entry(e);
    if (!is_trainable(p.role)) continue;
    const double lam = (p.role == nn::ParamRole::kBnAffine && !cfg_.decay_bn_affine) ? 0.0 : wd;
    auto w = p.value.values();
    auto g = grads.entry(e).value.values();
    auto u = velocity_.entry(e).value.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double ui = m * u[i] + lr * (static_cast<double>(g[i]) + lam * w[i]);
      u[i] = static_cast<float>(ui);
      w[i] = static_cast<float>(w[i] - ui);
    }
    if (!velocity_.entry(e).value.all_finite())
      throw DivergenceError("non-finite velocity in '" + p.name + "' at iteration " + std::to_string(iter),
                            iter);
  }
  prev_lr_ = lr;
}

}  // namespace ssgd::optim
