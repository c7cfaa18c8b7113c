// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssgd/ensemble/ensemble.hpp"
#include "ssgd/error.hpp"

using namespace ssgd;
using namespace ssgd::ensemble;
using nn::ParamSet;
using nn::Tensor;

namespace {

data::Dataset tiny_data() {
  data::SyntheticSpec s;
  s.classes = 6;
  s.n_train = 60;
  s.n_val = 90;
  s.geometry = {1, 5, 5};
  s.seed = 3;
  return data::make_synthetic(s);
}

nn::ModelSpec tiny_model(std::uint64_t seed) {
  nn::ModelSpec m;
  m.input_shape = {1, 4, 4};
  m.hidden = {12};
  m.classes = 6;
  m.seed = seed;
  return m;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ssgd_test_ens_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ParamSet member(std::uint64_t seed) {
  nn::Network net(tiny_model(seed));
  return net.init_params();
}

}  // namespace

TEST(Metrics, HandComputed) {
  Tensor p({3, 3}, std::vector<float>{0.7f, 0.2f, 0.1f, 0.3f, 0.3f, 0.4f, 0.1f, 0.6f, 0.3f});
  std::vector<int> y = {0, 1, 2};
  auto m = metrics_from_probs(p, y);
  EXPECT_DOUBLE_EQ(m.top1, 1.0 / 3.0);  // only row 0; row 1 has 0.4 > 0.3
  EXPECT_DOUBLE_EQ(m.top5, 1.0);
  const double loss = -(std::log(double(0.7f)) + std::log(double(0.3f)) + std::log(double(0.3f))) / 3;
  EXPECT_NEAR(m.loss, loss, 1e-12);
  EXPECT_EQ(m.examples, 3u);
}

TEST(Metrics, TopKCountsStrictlyHigherClasses) {
  // 7 classes; label 6 has four strictly higher scores -> top-5 hit, top-1 miss.
  Tensor p({1, 7}, std::vector<float>{0.2f, 0.2f, 0.2f, 0.2f, 0.05f, 0.05f, 0.1f});
  auto m = metrics_from_probs(p, std::vector<int>{6});
  EXPECT_EQ(m.top1, 0.0);
  EXPECT_EQ(m.top5, 1.0);
  auto m2 = metrics_from_probs(p, std::vector<int>{4});
  EXPECT_EQ(m2.top5, 0.0);
  EXPECT_THROW(metrics_from_probs(p, std::vector<int>{7}), ShapeError);
  EXPECT_THROW(metrics_from_probs(p, std::vector<int>{1, 2}), ShapeError);
}

TEST(Ensemble, SingleMemberMatchesModel) {
  auto ds = tiny_data();
  nn::Network net(tiny_model(1));
  auto p = member(1);
  auto a = ensemble_eval(net, {p}, ds);
  auto b = evaluate_model(net, p, ds);
  EXPECT_EQ(a.top1, b.top1);
  EXPECT_EQ(a.top5, b.top5);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Ensemble, IdenticalMembersMatchModel) {
  auto ds = tiny_data();
  nn::Network net(tiny_model(1));
  auto p = member(2);
  auto a = ensemble_eval(net, {p, p, p, p, p}, ds);
  auto b = evaluate_model(net, p, ds);
  EXPECT_EQ(a.top1, b.top1);
  EXPECT_EQ(a.top5, b.top5);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Ensemble, ProbabilitiesAreDistributionsAndOrderInvariant) {
  auto ds = tiny_data();
  nn::Network net(tiny_model(1));
  std::vector<ParamSet> ms = {member(1), member(2), member(3), member(4), member(5)};
  auto probs = ensemble_probs(net, ms, ds);
  for (std::size_t i = 0; i < probs.dim(0); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < probs.dim(1); ++j) {
      EXPECT_GE(probs[i * probs.dim(1) + j], 0.0f);
      s += probs[i * probs.dim(1) + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  auto a = ensemble_eval(net, ms, ds);
  std::vector<ParamSet> rev(ms.rbegin(), ms.rend());
  auto b = ensemble_eval(net, rev, ds);
  EXPECT_NEAR(a.loss, b.loss, 1e-6);
  EXPECT_NEAR(a.top1, b.top1, 1.0 / 90.0 + 1e-12);
  EXPECT_GE(a.top5, a.top1);
}

TEST(Ensemble, ProbabilityMeanOracle) {
  auto ds = tiny_data();
  nn::Network net(tiny_model(1));
  std::vector<ParamSet> ms = {member(7), member(8)};
  auto p0 = predict_val(net, ms[0], ds), p1 = predict_val(net, ms[1], ds);
  auto e = ensemble_probs(net, ms, ds);
  for (std::size_t i = 0; i < e.size(); ++i) ASSERT_NEAR(e[i], 0.5 * (double(p0[i]) + p1[i]), 1e-7);
}

TEST(Ensemble, LogitMeanOption) {
  auto ds = tiny_data();
  nn::Network net(tiny_model(1));
  std::vector<ParamSet> ms = {member(7), member(8)};
  auto l0 = predict_val_logits(net, ms[0], ds), l1 = predict_val_logits(net, ms[1], ds);
  auto e = ensemble_probs(net, ms, ds, Combination::kLogitMean);
  const std::size_t c = 6;
  for (std::size_t i = 0; i < ds.n_val(); ++i) {
    double z[6], mx = -1e300, s = 0;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[j] = 0.5 * (double(l0[i * c + j]) + l1[i * c + j]));
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    for (std::size_t j = 0; j < c; ++j) ASSERT_NEAR(e[i * c + j], std::exp(z[j] - mx) / s, 1e-6);
  }
}

TEST(Ensemble, RejectsMismatchedMembers) {
  auto ds = tiny_data();
  nn::Network net(tiny_model(1));
  auto other = tiny_model(1);
  other.hidden = {13};
  auto bad = nn::Network(other).init_params();
  EXPECT_THROW(ensemble_eval(net, {member(1), bad}, ds), ShapeError);
  EXPECT_THROW(ensemble_eval(net, {}, ds), ConfigError);
}

TEST(Snapshots, StoreAndLoadRoundTrip) {
  auto dir = scratch("rt");
  Snapshot s;
  s.epoch = 60;
  s.cycle = 1;
  s.params = member(3);
  s.eval = {1.25, 0.5, 0.875, 90};
  auto r = store_snapshot(dir, s);
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_EQ(r.params_file.filename(), "snapshot_e060.params");
  EXPECT_TRUE(std::filesystem::exists(dir / "snapshot_e060.json"));
  Snapshot s2 = s;
  s2.epoch = 75;
  s2.cycle = 2;
  ASSERT_TRUE(store_snapshot(dir, s2).ok);
  auto back = load_snapshots(dir);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].epoch, 60);
  EXPECT_EQ(back[1].cycle, 2);
  EXPECT_EQ(nn::serialize(back[0].params), nn::serialize(s.params));
  EXPECT_EQ(back[0].eval.top5, 0.875);
  std::filesystem::remove_all(dir);
}

TEST(Snapshots, StorageFailureIsReportedNotThrown) {
  auto blocker = scratch("blocker");
  std::ofstream(blocker) << "not a directory";
  Snapshot s;
  s.epoch = 60;
  s.params = member(1);
  CaptureResult r;
  EXPECT_NO_THROW(r = store_snapshot(blocker / "sub", s));
  EXPECT_FALSE(r.ok);
  EXPECT_FALSE(r.error.empty());
  std::filesystem::remove(blocker);
}

TEST(Snapshots, StemFormat) {
  EXPECT_EQ(snapshot_stem(5), "snapshot_e005");
  EXPECT_EQ(snapshot_stem(120), "snapshot_e120");
}
