// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ssgd::perf {

inline constexpr double kImageNetTrainSize = 1281167.0;

struct PerfRow {
  std::size_t n_workers = 0;
  std::size_t local_batch = 0;
  double seconds_per_epoch = 0.0;
  std::optional<double> throughput;  // images/s as measured, if reported
};

class PerfTable {
 public:
  explicit PerfTable(std::vector<PerfRow> rows, double dataset_size = kImageNetTrainSize);

  const std::vector<PerfRow>& rows() const { return rows_; }
  double dataset_size() const { return dataset_size_; }
  // Throws ConfigError listing the known (workers, local batch) pairs.
  const PerfRow& row(std::size_t n_workers, std::size_t local_batch) const;
  const PerfRow* find(std::size_t n_workers, std::size_t local_batch) const;
  std::string known_configs() const;

 private:
  std::vector<PerfRow> rows_;
  double dataset_size_;
};

// Header n_workers,local_batch,seconds_per_epoch[,throughput]; blank lines and '#' comments skipped.
PerfTable parse_perf_csv(const std::string& text, double dataset_size = kImageNetTrainSize);
PerfTable load_perf_csv(const std::filesystem::path& path, double dataset_size = kImageNetTrainSize);

// Target top-1 (percent) to epochs needed with the collapsed-ensemble schedule.
class AccuracyEpochMap {
 public:
  AccuracyEpochMap();  // 75.5 -> 48, 76.0 -> 64, 76.5 -> 78
  explicit AccuracyEpochMap(std::map<double, double> targets);
  double epochs(double target) const;
  const std::map<double, double>& targets() const { return targets_; }

 private:
  std::map<double, double> targets_;
};

// Minutes, rounded half-up.
long project_minutes(double epochs, double seconds_per_epoch);
long project_ttt(const PerfTable& table, std::size_t n_workers, std::size_t local_batch, double target,
                 const AccuracyEpochMap& map = {});

double scaling_efficiency(const PerfTable& table, std::size_t base_workers, std::size_t scaled_workers,
                          std::size_t local_batch);

struct SpeedupPoint {
  std::size_t n_workers;
  double speedup;
  double ideal;
};

// Weak scaling at one local batch, normalized to the reference row.
std::vector<SpeedupPoint> speedup_curve(const PerfTable& table, std::size_t local_batch,
                                        std::size_t reference_workers = 4);

double throughput(const PerfTable& table, const PerfRow& row);

// A row from measured epoch wall times (mean of all epochs given).
PerfRow row_from_epoch_times(std::size_t n_workers, std::size_t local_batch, const std::vector<double>& seconds);

}  // namespace ssgd::perf
