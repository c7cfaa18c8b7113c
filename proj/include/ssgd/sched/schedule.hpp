// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

namespace ssgd::sched {

enum class Kind { kLr, kWeightDecay };

// value(iter) = end + (start - end) * (1 - u)^power, u = (iter - start_iter) / (end_iter - start_iter).
// power 1 is plain linear interpolation in either direction.
struct Segment {
  long start_iter = 0;
  long end_iter = 1;
  double start_value = 0.0;
  double end_value = 0.0;
  double power = 1.0;

  double value_at(long iter) const;
  friend bool operator==(const Segment&, const Segment&) = default;
};

// Contiguous segments covering [0, total_iters). Immutable once built.
class ScheduleSpec {
 public:
  ScheduleSpec() = default;
  ScheduleSpec(Kind kind, std::vector<Segment> segments);

  Kind kind() const { return kind_; }
  const std::vector<Segment>& segments() const { return segments_; }
  long total_iters() const { return segments_.empty() ? 0 : segments_.back().end_iter; }
  bool empty() const { return segments_.empty(); }

  // Throws ConfigError when iter is outside [0, total_iters).
  double at(long iter) const;

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;

 private:
  Kind kind_ = Kind::kLr;
  std::vector<Segment> segments_;
};

inline double lr_at(const ScheduleSpec& spec, long iter) { return spec.at(iter); }

struct ScalingRule {
  double base_lr_per_256 = 0.1;
  double lr_cap = 6.4;
  double warmup_epochs = 5.0;

  void validate() const;
};

double peak_lr(const ScalingRule& rule, long global_batch);

// floor(epoch * iters_per_epoch), robust to representation error in epoch.
long epoch_to_iter(double epoch, long iters_per_epoch);

ScheduleSpec constant(Kind kind, double value, long total_iters);

// Warm-up from base_lr_per_256 to peak, then linear decay to 0.
ScheduleSpec build_linear(const ScalingRule& rule, long global_batch, long iters_per_epoch,
                          double total_epochs = 90.0);
// Warm-up, then peak divided by 10 at epochs 30, 60 and 80.
ScheduleSpec build_3step(const ScalingRule& rule, long global_batch, long iters_per_epoch,
                         double total_epochs = 90.0);

// lr and weight decay together with the run-level augmentation switch and
// snapshot points. augmentation_off_at == lr.total_iters() means never.
struct ScheduleBundle {
  ScheduleSpec lr;
  ScheduleSpec wd;
  long augmentation_off_at = 0;
  std::vector<double> snapshot_epochs;

  bool augmentation_on(long iter) const { return iter < augmentation_off_at; }
};

struct CollapseOptions {
  double wd_before = 0.00005;
  double wd_after = 0.0001;
  double wd_no_collapse = 0.0001;
};

// collapse_epochs is 0 (no collapse) or in [3, 10].
ScheduleBundle build_final_collapse(const ScheduleSpec& base, double collapse_epochs, long iters_per_epoch,
                                    const CollapseOptions& opts = {});

struct EnsembleOptions {
  double wd_before = 0.00005;
  double wd_after = 0.0001;  // from the first cycle on
};

ScheduleBundle build_collapsed_ensemble(const ScalingRule& rule, long global_batch, long iters_per_epoch,
                                        double total_epochs = 120.0, const EnsembleOptions& opts = {});

// phases: (start_epoch, value) with the first at epoch 0 and values non-decreasing.
ScheduleSpec build_multistep_wd(const std::vector<std::pair<double, double>>& phases, long iters_per_epoch,
                                double total_epochs);

struct CurveRow {
  long iter;
  double epoch;
  double lr;
  double weight_decay;
  bool augmentation_on;
};

// Every stride-th iteration plus the last one.
std::vector<CurveRow> dump_curve(const ScheduleBundle& bundle, long stride, long iters_per_epoch);
void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& rows);

}  // namespace ssgd::sched
