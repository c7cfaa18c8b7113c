// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssgd/data/dataset.hpp"
#include "ssgd/nn/network.hpp"
#include "ssgd/nn/param_set.hpp"

namespace ssgd::ensemble {

// top1/top5 are fractions in [0, 1].
struct EvalMetrics {
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t examples = 0;
};

enum class Combination { kProbabilityMean, kLogitMean };

// Metrics of a probability matrix [N, classes]. An example counts as top-k
// correct when fewer than k classes score strictly higher than its label.
EvalMetrics metrics_from_probs(const nn::Tensor& probs, std::span<const int> labels);

// Class probabilities for the whole validation split (center crop).
nn::Tensor predict_val(nn::Network& net, const nn::ParamSet& params, const data::Dataset& ds,
                       std::size_t batch = 256);
nn::Tensor predict_val_logits(nn::Network& net, const nn::ParamSet& params, const data::Dataset& ds,
                              std::size_t batch = 256);

EvalMetrics evaluate_model(nn::Network& net, const nn::ParamSet& params, const data::Dataset& ds);

// Combined prediction of the members; throws ShapeError when member layouts
// disagree with each other or with the network.
nn::Tensor ensemble_probs(nn::Network& net, const std::vector<nn::ParamSet>& members, const data::Dataset& ds,
                          Combination how = Combination::kProbabilityMean);
EvalMetrics ensemble_eval(nn::Network& net, const std::vector<nn::ParamSet>& members, const data::Dataset& ds,
                          Combination how = Combination::kProbabilityMean);

struct Snapshot {
  int epoch = 0;
  int cycle = 0;
  nn::ParamSet params;
  EvalMetrics eval;
};

struct CaptureResult {
  bool ok = false;
  std::filesystem::path params_file;
  std::string error;
};

// Writes snapshot_eNNN.params and snapshot_eNNN.json into `dir`. Never
// throws: I/O failures come back in the result so training can continue.
CaptureResult store_snapshot(const std::filesystem::path& dir, const Snapshot& snap);

// All snapshot_e*.json sidecars in `dir`, ordered by epoch, with params.
std::vector<Snapshot> load_snapshots(const std::filesystem::path& dir);

std::string snapshot_stem(int epoch);

}  // namespace ssgd::ensemble
