// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ssgd/data/augment.hpp"
#include "ssgd/data/dataset.hpp"
#include "ssgd/dist/ssgd_runner.hpp"
#include "ssgd/nn/network.hpp"
#include "ssgd/optim/sgd.hpp"
#include "ssgd/sched/schedule.hpp"

namespace ssgd::harness {

inline constexpr int kSchemaVersion = 1;

enum class DataSource { kSynthetic, kIdx };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  data::SyntheticSpec synthetic;
  std::filesystem::path idx_dir;  // source idx
  std::size_t classes = 0;        // source idx; 0 means max label + 1
};

enum class ScheduleName { kLinear, kThreeStep, kFinalCollapse, kCollapsedEnsemble, kConstant };

// A named builder plus the knobs it reads. Unused knobs are still written
// out so the resolved file shows every value in effect.
struct ScheduleConfig {
  ScheduleName name = ScheduleName::kLinear;
  sched::ScalingRule rule;
  double weight_decay = 0.0001;  // linear, 3step, constant
  double lr = 0.1;               // constant
  double collapse_epochs = 5.0;  // final_collapse
  sched::CollapseOptions collapse;
  sched::EnsembleOptions ensemble;
};

struct RunConfig {
  nn::ModelSpec model;
  DataConfig data;
  dist::ClusterSpec cluster;
  ScheduleConfig schedule;
  optim::SgdConfig optimizer;
  data::AugmentPolicy augment;
  double epochs = 90.0;
  std::uint64_t seed = 1;
  bool evaluate_epochs = true;
  std::filesystem::path output_dir = "run";
};

// Strict: unknown keys, wrong types and a missing or different
// schema_version are ConfigErrors naming the offending key path.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
// Relative idx paths resolve against the config file's directory.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

std::string schedule_name_str(ScheduleName n);

data::Dataset load_dataset(const DataConfig& cfg);
sched::ScheduleBundle resolve_schedule(const RunConfig& cfg, long iters_per_epoch);
// Everything ssgd_run needs, for a dataset already loaded.
dist::TrainConfig train_config(const RunConfig& cfg, const data::Dataset& ds);

}  // namespace ssgd::harness
