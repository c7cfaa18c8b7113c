// SPDX-License-Identifier: Apache-2.0
#include "ssgd/ensemble/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "ssgd/data/augment.hpp"
#include "ssgd/error.hpp"

namespace ssgd::ensemble {

using nlohmann::json;

EvalMetrics metrics_from_probs(const nn::Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw ShapeError("metrics: probabilities " + nn::shape_str(probs.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  EvalMetrics m;
  m.examples = n;
  double loss = 0.0;
  std::size_t c1 = 0, c5 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ShapeError("metrics: label out of range");
    const float* row = probs.data() + i * c;
    const float py = row[y];
    std::size_t higher = 0;
    for (std::size_t j = 0; j < c; ++j) higher += row[j] > py;
    c1 += higher < 1;
    c5 += higher < 5;
    loss -= std::log(std::max(static_cast<double>(py), 1e-30));
  }
  m.loss = loss / static_cast<double>(n);
  m.top1 = static_cast<double>(c1) / static_cast<double>(n);
  m.top5 = static_cast<double>(c5) / static_cast<double>(n);
  return m;
}

namespace {

data::Geometry input_geometry(const nn::Network& net) {
  const auto& s = net.spec().input_shape;
  return {s[0], s[1], s[2]};
}

nn::Tensor predict(nn::Network& net, const nn::ParamSet& params, const data::Dataset& ds, std::size_t batch,
                   bool logits) {
  if (ds.n_val() == 0) throw ConfigError("validation split is empty");
  if (batch == 0) batch = 256;
  const auto g = input_geometry(net);
  const std::size_t c = net.spec().classes;
  nn::Tensor out({ds.n_val(), c});
  for (std::size_t b = 0; b < ds.n_val(); b += batch) {
    const std::size_t e = std::min(ds.n_val(), b + batch);
    auto r = net.evaluate(params, data::make_val_batch(ds, b, e, g), {});
    const nn::Tensor& src = logits ? r.logits : r.probs;
    std::copy(src.data(), src.data() + src.size(), out.data() + b * c);
  }
  return out;
}

void check_layout(const nn::ParamSet& ref, const nn::ParamSet& p, std::size_t member) {
  bool same = ref.size() == p.size();
  for (std::size_t i = 0; same && i < ref.size(); ++i)
    same = ref.entry(i).name == p.entry(i).name && ref.entry(i).value.shape() == p.entry(i).value.shape();
  if (!same) throw ShapeError("ensemble member " + std::to_string(member) + " has a different parameter layout");
}

}  // namespace

nn::Tensor predict_val(nn::Network& net, const nn::ParamSet& params, const data::Dataset& ds, std::size_t batch) {
  return predict(net, params, ds, batch, false);
}

nn::Tensor predict_val_logits(nn::Network& net, const nn::ParamSet& params, const data::Dataset& ds,
                              std::size_t batch) {
  return predict(net, params, ds, batch, true);
}

EvalMetrics evaluate_model(nn::Network& net, const nn::ParamSet& params, const data::Dataset& ds) {
  return metrics_from_probs(predict_val(net, params, ds), ds.val_labels());
}

nn::Tensor ensemble_probs(nn::Network& net, const std::vector<nn::ParamSet>& members, const data::Dataset& ds,
                          Combination how) {
  if (members.empty()) throw ConfigError("ensemble needs at least one member");
  const nn::ParamSet ref = net.init_params();
  for (std::size_t k = 0; k < members.size(); ++k) check_layout(ref, members[k], k);

  const bool logit = how == Combination::kLogitMean;
  std::vector<double> acc;
  nn::Shape shape;
  for (const auto& m : members) {
    nn::Tensor t = logit ? predict_val_logits(net, m, ds) : predict_val(net, m, ds);
    if (acc.empty()) {
      acc.assign(t.size(), 0.0);
      shape = t.shape();
    }
    for (std::size_t i = 0; i < t.size(); ++i) acc[i] += t[i];
  }
  const double k = static_cast<double>(members.size());
  nn::Tensor mean(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / k);
  return logit ? nn::softmax(mean) : mean;
}

EvalMetrics ensemble_eval(nn::Network& net, const std::vector<nn::ParamSet>& members, const data::Dataset& ds,
                          Combination how) {
  return metrics_from_probs(ensemble_probs(net, members, ds, how), ds.val_labels());
}

std::string snapshot_stem(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snapshot_e%03d", epoch);
  return buf;
}

CaptureResult store_snapshot(const std::filesystem::path& dir, const Snapshot& snap) {
  CaptureResult res;
  try {
    std::filesystem::create_directories(dir);
    const std::string stem = snapshot_stem(snap.epoch);
    res.params_file = dir / (stem + ".params");
    nn::save_params(snap.params, res.params_file);
    json meta = {{"epoch", snap.epoch},
                 {"cycle", snap.cycle},
                 {"params", stem + ".params"},
                 {"loss", snap.eval.loss},
                 {"top1", snap.eval.top1},
                 {"top5", snap.eval.top5},
                 {"examples", snap.eval.examples}};
    std::ofstream out(dir / (stem + ".json"));
    out << meta.dump(2) << '\n';
    if (!out) throw Error("cannot write " + (dir / (stem + ".json")).string());
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

std::vector<Snapshot> load_snapshots(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("snapshot directory not found: " + dir.string());
  std::vector<Snapshot> out;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    const auto name = f.path().filename().string();
    if (f.path().extension() != ".json" || name.rfind("snapshot_e", 0) != 0) continue;
    std::ifstream in(f.path());
    json meta;
    try {
      meta = json::parse(in);
      Snapshot s;
      s.epoch = meta.at("epoch").get<int>();
      s.cycle = meta.at("cycle").get<int>();
      s.eval.loss = meta.at("loss").get<double>();
      s.eval.top1 = meta.at("top1").get<double>();
      s.eval.top5 = meta.at("top5").get<double>();
      s.eval.examples = meta.value("examples", std::size_t{0});
      s.params = nn::load_params(dir / meta.at("params").get<std::string>());
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError(f.path().string() + ": " + e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const Snapshot& a, const Snapshot& b) { return a.epoch < b.epoch; });
  return out;
}

}  // namespace ssgd::ensemble
