// SPDX-License-Identifier: Apache-2.0
#include "ssgd/sched/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

#include "ssgd/error.hpp"

namespace ssgd::sched {

double Segment::value_at(long iter) const {
  if (iter == start_iter) return start_value;
  const double u = static_cast<double>(iter - start_iter) / static_cast<double>(end_iter - start_iter);
  if (power == 1.0) return start_value + (end_value - start_value) * u;
  return end_value + (start_value - end_value) * std::pow(1.0 - u, power);
}

ScheduleSpec::ScheduleSpec(Kind kind, std::vector<Segment> segments)
    : kind_(kind), segments_(std::move(segments)) {
  long cursor = 0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const Segment& s = segments_[i];
    const std::string at = "schedule segment " + std::to_string(i);
    if (s.start_iter != cursor) throw ConfigError(at + ": starts at " + std::to_string(s.start_iter) +
                                                  ", expected " + std::to_string(cursor));
    if (s.end_iter <= s.start_iter) throw ConfigError(at + ": empty iteration range");
    if (!(s.start_value >= 0.0) || !(s.end_value >= 0.0)) throw ConfigError(at + ": negative value");
    if (!(s.power > 0.0)) throw ConfigError(at + ": power must be positive");
    cursor = s.end_iter;
  }
}

double ScheduleSpec::at(long iter) const {
  if (iter < 0 || iter >= total_iters())
    throw ConfigError("schedule: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(total_iters()) + ")");
  auto it = std::upper_bound(segments_.begin(), segments_.end(), iter,
                             [](long i, const Segment& s) { return i < s.end_iter; });
  return it->value_at(iter);
}

void ScalingRule::validate() const {
  if (!(base_lr_per_256 > 0.0) || !(lr_cap > 0.0) || !(warmup_epochs > 0.0))
    throw ConfigError("scaling rule: base_lr_per_256, lr_cap and warmup_epochs must be positive");
}

double peak_lr(const ScalingRule& rule, long global_batch) {
  if (global_batch < 1) throw ConfigError("global batch must be at least 1");
  return std::min(rule.base_lr_per_256 * static_cast<double>(global_batch) / 256.0, rule.lr_cap);
}

long epoch_to_iter(double epoch, long iters_per_epoch) {
  if (iters_per_epoch < 1) throw ConfigError("iters_per_epoch must be at least 1");
  const double x = epoch * static_cast<double>(iters_per_epoch);
  return static_cast<long>(std::floor(x + 1e-9 * std::max(1.0, std::fabs(x))));
}

namespace {

// Appends segments from a running cursor; ranges that round to nothing are
// skipped and the next segment starts from its own anchor value.
class Builder {
 public:
  Builder(Kind kind, double start_value) : kind_(kind), value_(start_value) {}

  void to(long end_iter, double end_value, double power = 1.0) {
    if (end_iter > cursor_) segs_.push_back({cursor_, end_iter, value_, end_value, power});
    cursor_ = std::max(cursor_, end_iter);
    value_ = end_value;
  }
  void hold(long end_iter) { to(end_iter, value_); }
  void jump(double value) { value_ = value; }
  double value() const { return value_; }

  ScheduleSpec done() { return ScheduleSpec(kind_, std::move(segs_)); }

 private:
  Kind kind_;
  long cursor_ = 0;
  double value_;
  std::vector<Segment> segs_;
};

void check_run(const ScalingRule& rule, long iters_per_epoch, double total_epochs) {
  rule.validate();
  if (iters_per_epoch < 1) throw ConfigError("iters_per_epoch must be at least 1");
  if (!(total_epochs > rule.warmup_epochs))
    throw ConfigError("total_epochs must exceed the warm-up length");
}

}  // namespace

ScheduleSpec constant(Kind kind, double value, long total_iters) {
  return ScheduleSpec(kind, {{0, total_iters, value, value, 1.0}});
}

ScheduleSpec build_linear(const ScalingRule& rule, long global_batch, long iters_per_epoch,
                          double total_epochs) {
  check_run(rule, iters_per_epoch, total_epochs);
  const double peak = peak_lr(rule, global_batch);
  Builder b(Kind::kLr, rule.base_lr_per_256);
  b.to(epoch_to_iter(rule.warmup_epochs, iters_per_epoch), peak);
  b.to(epoch_to_iter(total_epochs, iters_per_epoch), 0.0);
  return b.done();
}

ScheduleSpec build_3step(const ScalingRule& rule, long global_batch, long iters_per_epoch,
                         double total_epochs) {
  check_run(rule, iters_per_epoch, total_epochs);
  const double peak = peak_lr(rule, global_batch);
  const double f = total_epochs / 90.0;
  Builder b(Kind::kLr, rule.base_lr_per_256);
  b.to(epoch_to_iter(rule.warmup_epochs, iters_per_epoch), peak);
  double v = peak;
  for (double drop : {30.0, 60.0, 80.0}) {
    b.hold(epoch_to_iter(drop * f, iters_per_epoch));
    v /= 10.0;
    b.jump(v);
  }
  b.hold(epoch_to_iter(total_epochs, iters_per_epoch));
  return b.done();
}

ScheduleBundle build_final_collapse(const ScheduleSpec& base, double collapse_epochs, long iters_per_epoch,
                                    const CollapseOptions& opts) {
  if (base.empty()) throw ConfigError("final collapse: empty base schedule");
  const long total = base.total_iters();
  if (collapse_epochs == 0.0)
    return {base, constant(Kind::kWeightDecay, opts.wd_no_collapse, total), total, {}};
  if (!(collapse_epochs >= 3.0 && collapse_epochs <= 10.0))
    throw ConfigError("collapse_epochs must be 0 or within [3, 10]");

  const double total_epochs = static_cast<double>(total) / static_cast<double>(iters_per_epoch);
  const long cs = epoch_to_iter(total_epochs - collapse_epochs, iters_per_epoch);
  if (cs <= 0 || cs >= total) throw ConfigError("final collapse does not fit inside the base schedule");
  const double v = base.at(cs);

  std::vector<Segment> segs;
  for (const Segment& s : base.segments()) {
    if (s.end_iter <= cs) {
      segs.push_back(s);
    } else if (s.start_iter < cs) {
      if (s.power != 1.0 && s.start_value != s.end_value)
        throw ConfigError("final collapse must start inside a linear or constant segment");
      segs.push_back({s.start_iter, cs, s.start_value, v, 1.0});
    }
  }
  segs.push_back({cs, total, v, 0.0, 2.0});

  Builder wd(Kind::kWeightDecay, opts.wd_before);
  wd.hold(cs);
  wd.jump(opts.wd_after);
  wd.hold(total);
  return {ScheduleSpec(Kind::kLr, std::move(segs)), wd.done(), cs, {}};
}

ScheduleBundle build_collapsed_ensemble(const ScalingRule& rule, long global_batch, long iters_per_epoch,
                                        double total_epochs, const EnsembleOptions& opts) {
  check_run(rule, iters_per_epoch, total_epochs);
  const double f = total_epochs / 120.0;
  auto it = [&](double e) { return epoch_to_iter(e * f, iters_per_epoch); };
  const double peak = peak_lr(rule, global_batch);

  Builder b(Kind::kLr, rule.base_lr_per_256);
  b.to(epoch_to_iter(rule.warmup_epochs * f, iters_per_epoch), peak);
  // Continue the full-run linear slope to epoch 30.
  b.to(it(30), peak * (120.0 - 30.0) / (120.0 - rule.warmup_epochs));
  b.to(it(45), 0.22 * peak, 2.0);

  ScheduleBundle out;
  for (int k = 0; k < 5; ++k) {
    const double start = 45.0 + 15.0 * k;
    const double top = 3.0 * b.value();
    b.to(it(start + 3.0), top);
    b.to(it(start + 15.0), top / 4.0, 2.0);
    out.snapshot_epochs.push_back((start + 15.0) * f);
  }
  out.lr = b.done();

  Builder wd(Kind::kWeightDecay, opts.wd_before);
  wd.hold(it(45));
  wd.jump(opts.wd_after);
  wd.hold(out.lr.total_iters());
  out.wd = wd.done();
  out.augmentation_off_at = out.lr.total_iters();
  return out;
}

ScheduleSpec build_multistep_wd(const std::vector<std::pair<double, double>>& phases, long iters_per_epoch,
                                double total_epochs) {
  if (phases.empty() || phases.front().first != 0.0)
    throw ConfigError("weight-decay phases must start at epoch 0");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (!(phases[i].second >= 0.0)) throw ConfigError("weight-decay phase value must be non-negative");
    if (i > 0 && !(phases[i].first > phases[i - 1].first))
      throw ConfigError("weight-decay phase epochs must be increasing");
    if (i > 0 && phases[i].second < phases[i - 1].second)
      throw ConfigError("weight-decay phases must be non-decreasing");
  }
  if (!(phases.back().first < total_epochs)) throw ConfigError("weight-decay phase beyond the run");
  Builder b(Kind::kWeightDecay, phases.front().second);
  for (std::size_t i = 1; i < phases.size(); ++i) {
    b.hold(epoch_to_iter(phases[i].first, iters_per_epoch));
    b.jump(phases[i].second);
  }
  b.hold(epoch_to_iter(total_epochs, iters_per_epoch));
  return b.done();
}

std::vector<CurveRow> dump_curve(const ScheduleBundle& bundle, long stride, long iters_per_epoch) {
  if (stride < 1) throw ConfigError("dump stride must be at least 1");
  if (iters_per_epoch < 1) throw ConfigError("iters_per_epoch must be at least 1");
  const long total = bundle.lr.total_iters();
  if (bundle.wd.total_iters() != total) throw ConfigError("lr and weight-decay schedules differ in length");
  std::vector<CurveRow> rows;
  auto add = [&](long i) {
    rows.push_back({i, static_cast<double>(i) / static_cast<double>(iters_per_epoch), bundle.lr.at(i),
                    bundle.wd.at(i), bundle.augmentation_on(i)});
  };
  for (long i = 0; i < total; i += stride) add(i);
  if (total > 0 && (total - 1) % stride != 0) add(total - 1);
  return rows;
}

void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& rows) {
  out << "iter,epoch,lr,weight_decay,augmentation_on\n";
  out << std::setprecision(12);
  for (const CurveRow& r : rows)
    out << r.iter << ',' << r.epoch << ',' << r.lr << ',' << r.weight_decay << ','
        << (r.augmentation_on ? 1 : 0) << '\n';
}

}  // namespace ssgd::sched
