// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ssgd/nn/param_set.hpp"
#include "ssgd/sched/schedule.hpp"

namespace ssgd::optim {

struct SgdConfig {
  double momentum = 0.9;
  bool decay_bn_affine = false;

  void validate() const;
};

// Coupled momentum SGD with the lr-ratio momentum correction:
//   u <- m * (lr_t / lr_{t-1}) * u + lr_t * (g + wd * w);  w <- w - u
// BN running statistics are never touched.
class MomentumSgd {
 public:
  MomentumSgd(SgdConfig cfg, sched::ScheduleSpec lr, sched::ScheduleSpec wd);

  // Uses lr and wd from the schedules at `iter`.
  void step(nn::ParamSet& params, const nn::ParamSet& grads, long iter);
  void step_with(nn::ParamSet& params, const nn::ParamSet& grads, double lr, double wd, long iter);

  const SgdConfig& config() const { return cfg_; }
  const sched::ScheduleSpec& lr_schedule() const { return lr_; }
  const sched::ScheduleSpec& wd_schedule() const { return wd_; }
  const nn::ParamSet& velocity() const { return velocity_; }
  double prev_lr() const { return prev_lr_; }

 private:
  SgdConfig cfg_;
  sched::ScheduleSpec lr_, wd_;
  nn::ParamSet velocity_;
  bool has_velocity_ = false;
  double prev_lr_ = 0.0;
};

}  // namespace ssgd::optim
