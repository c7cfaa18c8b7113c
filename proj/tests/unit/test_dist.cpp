// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <mutex>
#include <random>

#include "ring_harness.hpp"
#include "ssgd/dist/ring_allreduce.hpp"
#include "ssgd/dist/ssgd_runner.hpp"
#include "ssgd/dist/traffic.hpp"

using namespace ssgd;
using namespace ssgd::dist;
using oracle::on_inprocess_ring;
using oracle::on_tcp_ring;

namespace {

std::vector<std::vector<float>> random_inputs(std::size_t n, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<std::vector<float>> xs(n, std::vector<float>(len));
  for (auto& x : xs)
    for (auto& v : x) v = u(rng);
  return xs;
}

// Gather every input and take the mean in double.
std::vector<double> gather_mean(const std::vector<std::vector<float>>& xs) {
  std::vector<double> m(xs[0].size(), 0.0);
  for (const auto& x : xs)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += x[i];
  for (auto& v : m) v /= static_cast<double>(xs.size());
  return m;
}

// Same summation order as a ring whose chunk c starts at rank (c - off).
std::vector<float> same_order_mean(const std::vector<std::vector<float>>& xs, std::size_t off) {
  const std::size_t n = xs.size(), len = xs[0].size();
  std::vector<float> out(len);
  for (std::size_t c = 0; c < n; ++c) {
    auto [b, e] = chunk_range(len, n, c);
    const std::size_t start = (c + n - off % n) % n;
    for (std::size_t i = b; i < e; ++i) {
      float acc = xs[start][i];
      for (std::size_t j = 1; j < n; ++j) acc = xs[(start + j) % n][i] + acc;
      out[i] = acc / static_cast<float>(n);
    }
  }
  return out;
}

using Runner = void (*)(std::size_t, const oracle::RankBody&);

std::vector<std::vector<float>> reduce_all(Runner run, std::vector<std::vector<float>> xs, std::uint32_t step,
                                           bool det, std::vector<AllreduceStats>* stats = nullptr) {
  std::vector<AllreduceStats> st(xs.size());
  run(xs.size(), [&](Transport& t) { st[t.rank()] = ring_allreduce(t, xs[t.rank()], step, det); });
  if (stats) *stats = st;
  return xs;
}

}  // namespace

TEST(ChunkRange, Partitions) {
  for (std::size_t len : {0u, 1u, 7u, 100u, 1001u})
    for (std::size_t n : {1u, 2u, 3u, 8u}) {
      std::size_t cursor = 0;
      for (std::size_t k = 0; k < n; ++k) {
        auto [b, e] = chunk_range(len, n, k);
        EXPECT_EQ(b, cursor);
        EXPECT_LE(e - b, len / n + 1);
        cursor = e;
      }
      EXPECT_EQ(cursor, len);
    }
}

TEST(RingAllreduce, SingleWorkerIsIdentity) {
  auto xs = random_inputs(1, 50, 1);
  auto out = reduce_all(on_inprocess_ring, xs, 0, true);
  EXPECT_EQ(out[0], xs[0]);
}

TEST(RingAllreduce, ScalarMean) {
  std::vector<std::vector<float>> xs = {{1}, {2}, {3}, {4}};
  auto out = reduce_all(on_inprocess_ring, xs, 0, true);
  for (const auto& o : out) EXPECT_EQ(o[0], 2.5f);
}

TEST(RingAllreduce, MatchesGatherOracle) {
  auto xs = random_inputs(3, 100000, 2);
  const auto ref = gather_mean(xs);
  for (bool det : {true, false}) {
    auto out = reduce_all(on_inprocess_ring, xs, 5, det);
    for (const auto& o : out) {
      EXPECT_EQ(o, out[0]);
      for (std::size_t i = 0; i < o.size(); ++i) {
        double scale = 0.0;
        for (const auto& x : xs) scale += std::fabs(x[i]);
        scale /= 3.0;
        ASSERT_LE(std::fabs(o[i] - ref[i]), 1e-6 * scale) << i;
      }
    }
  }
}

TEST(RingAllreduce, DeterministicModeIsBitExactToSameOrderOracle) {
  for (std::size_t n : {2u, 3u, 5u}) {
    auto xs = random_inputs(n, 1003, 10 + n);
    auto out = reduce_all(on_inprocess_ring, xs, 7, true);
    const auto ref = same_order_mean(xs, 0);
    for (const auto& o : out) EXPECT_EQ(o, ref) << n;
  }
}

TEST(RingAllreduce, NonDeterministicModeRotatesSummationOrder) {
  auto xs = random_inputs(4, 1000, 3);
  for (std::uint32_t step : {0u, 1u, 2u, 3u}) {
    auto out = reduce_all(on_inprocess_ring, xs, step, false);
    EXPECT_EQ(out[0], same_order_mean(xs, step % 4));
  }
}

TEST(RingAllreduce, MeanPreservation) {
  auto xs = random_inputs(5, 2000, 4);
  auto out = reduce_all(on_inprocess_ring, xs, 0, true);
  double in_sum = 0.0, out_sum = 0.0, mag = 0.0;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t i = 0; i < 2000; ++i) {
      in_sum += xs[r][i];
      out_sum += out[r][i];
      mag += std::fabs(xs[r][i]);
    }
  EXPECT_LE(std::fabs(in_sum - out_sum), 1e-6 * mag);
}

TEST(RingAllreduce, ByteCountersFollowRingFormula) {
  for (std::size_t n : {2u, 3u, 5u, 8u}) {
    const std::size_t len = 40 * n;  // divisible: every rank moves the same amount
    std::vector<AllreduceStats> st;
    reduce_all(on_inprocess_ring, random_inputs(n, len, n), 0, true, &st);
    const std::uint64_t model_bytes = 4 * len;
    std::uint64_t total = 0;
    for (const auto& s : st) {
      EXPECT_EQ(s.bytes_sent, 2 * model_bytes * (n - 1) / n);
      EXPECT_EQ(s.bytes_received, s.bytes_sent);
      total += s.bytes_sent;
    }
    EXPECT_EQ(total, 2 * (n - 1) * model_bytes);
  }
  std::vector<AllreduceStats> st;
  reduce_all(on_inprocess_ring, random_inputs(3, 10, 1), 0, true, &st);
  std::uint64_t total = 0;
  for (const auto& s : st) total += s.bytes_sent;
  EXPECT_EQ(total, 2u * 2u * 40u);
}

TEST(RingAllreduce, ShapeMismatchAbortsEveryone) {
  std::vector<std::vector<float>> xs = {std::vector<float>(10), std::vector<float>(12), std::vector<float>(10)};
  EXPECT_THROW(reduce_all(on_inprocess_ring, xs, 0, true), ShapeError);
}

TEST(RingAllreduce, FailedRankUnblocksPeers) {
  EXPECT_THROW(on_inprocess_ring(4,
                                 [](Transport& t) {
                                   std::vector<float> v(100, 1.0f);
                                   if (t.rank() == 2) throw ConfigError("boom");
                                   ring_allreduce(t, v, 0, true);
                                 }),
               ConfigError);
}

TEST(Tcp, HeaderLayout) {
  auto h = encode_header(0x01020304, 7, 12);
  std::array<std::uint8_t, 16> want = {0x53, 0x53, 0x47, 0x52, 4, 3, 2, 1, 7, 0, 0, 0, 12, 0, 0, 0};
  EXPECT_EQ(h, want);
  auto d = decode_header(h);
  EXPECT_EQ(d.step, 0x01020304u);
  EXPECT_EQ(d.chunk, 7u);
  EXPECT_EQ(d.payload_bytes, 12u);
  auto bad = h;
  bad[0] = 0;
  EXPECT_THROW(decode_header(bad), TransportError);
  auto odd = encode_header(0, 0, 6);
  EXPECT_THROW(decode_header(odd), TransportError);
}

TEST(Tcp, EndpointParsing) {
  auto e = Endpoint::parse("10.0.0.5:7001");
  EXPECT_EQ(e.host, "10.0.0.5");
  EXPECT_EQ(e.port, 7001);
  EXPECT_EQ(e.str(), "10.0.0.5:7001");
  EXPECT_THROW(Endpoint::parse("nohost"), ConfigError);
  EXPECT_THROW(Endpoint::parse("h:99999"), ConfigError);
  EXPECT_THROW(Endpoint::parse("h:x"), ConfigError);
}

TEST(Tcp, AllreduceMatchesInProcessBitwise) {
  for (std::size_t n : {2u, 3u}) {
    auto xs = random_inputs(n, 100000, 20 + n);
    std::vector<AllreduceStats> st_tcp, st_mem;
    auto tcp = reduce_all(on_tcp_ring, xs, 3, true, &st_tcp);
    auto mem = reduce_all(on_inprocess_ring, xs, 3, true, &st_mem);
    EXPECT_EQ(tcp, mem);
    for (std::size_t r = 0; r < n; ++r) EXPECT_EQ(st_tcp[r].bytes_sent, st_mem[r].bytes_sent);
  }
}

TEST(Tcp, ManyCollectivesOnOneConnection) {
  auto xs = random_inputs(3, 257, 8);
  std::vector<std::vector<float>> a = xs, b = xs;
  on_tcp_ring(3, [&](Transport& t) {
    for (std::uint32_t s = 0; s < 20; ++s) ring_allreduce(t, a[t.rank()], s, true);
  });
  on_inprocess_ring(3, [&](Transport& t) {
    for (std::uint32_t s = 0; s < 20; ++s) ring_allreduce(t, b[t.rank()], s, true);
  });
  EXPECT_EQ(a, b);
}

TEST(Tcp, PeerDisconnectAbortsCollective) {
  EXPECT_THROW(on_tcp_ring(3,
                           [](Transport& t) {
                             std::vector<float> v(1000, 1.0f);
                             ring_allreduce(t, v, 0, true);
                             if (t.rank() == 1) return;  // leaves before the second collective
                             ring_allreduce(t, v, 1, true);
                           }),
               TransportError);
}

TEST(Traffic, PublishedFigures) {
  auto t = traffic_per_iteration(256, 98.0, ExchangeAlgorithm::kFullExchange);
  EXPECT_DOUBLE_EQ(t.total, 50176.0);
  EXPECT_DOUBLE_EQ(t.total / 1024.0, 49.0);
  EXPECT_DOUBLE_EQ(traffic_per_iteration(64, 98.0, ExchangeAlgorithm::kFullExchange).total / 1024.0, 12.25);
  EXPECT_DOUBLE_EQ(traffic_per_iteration(32, 98.0, ExchangeAlgorithm::kFullExchange).total / 1024.0, 6.125);
  EXPECT_DOUBLE_EQ(t.per_worker, 196.0);
}

TEST(Traffic, RingFormula) {
  auto t = traffic_per_iteration(4, 100.0, ExchangeAlgorithm::kRing);
  EXPECT_DOUBLE_EQ(t.total, 600.0);
  EXPECT_DOUBLE_EQ(t.per_worker, 150.0);
  EXPECT_DOUBLE_EQ(traffic_per_iteration(1, 100.0, ExchangeAlgorithm::kRing).total, 0.0);
  EXPECT_THROW(traffic_per_iteration(0, 1.0, ExchangeAlgorithm::kRing), ConfigError);
  EXPECT_THROW(traffic_per_iteration(2, 0.0, ExchangeAlgorithm::kRing), ConfigError);
}

namespace {

data::Dataset desk_data() {
  data::SyntheticSpec s;
  s.classes = 4;
  s.n_train = 256;
  s.n_val = 64;
  s.geometry = {1, 8, 8};
  s.noise = 1.0;
  s.seed = 5;
  return data::make_synthetic(s);
}

TrainConfig desk_config(std::size_t n, std::size_t b, bool frozen, double epochs = 3) {
  TrainConfig c;
  c.model.input_shape = {1, 6, 6};
  c.model.hidden = {16};
  c.model.classes = 4;
  c.model.seed = 9;
  c.model.bn.frozen_statistics = frozen;
  c.cluster.n_workers = n;
  c.cluster.local_batch = b;
  c.seed = 17;
  const long ipe = data::iters_per_epoch(256, n * b);
  sched::ScalingRule rule{0.8, 6.4, 1.0};
  auto lr = sched::build_linear(rule, static_cast<long>(n * b), ipe, epochs);
  c.schedule = sched::build_final_collapse(lr, 0, ipe);
  return c;
}

}  // namespace

TEST(SsgdRun, ZeroIterationsReturnInitialParams) {
  auto ds = desk_data();
  auto cfg = desk_config(2, 8, false);
  cfg.schedule = {};
  auto res = ssgd_run(cfg, ds);
  EXPECT_EQ(res.params, nn::Network(cfg.model).init_params());
  EXPECT_TRUE(res.metrics.iters.empty());
}

TEST(SsgdRun, WorkersTimesLocalBatchEqualsLargeBatch) {
  auto ds = desk_data();
  auto four = ssgd_run(desk_config(4, 8, true), ds);
  auto one = ssgd_run(desk_config(1, 32, true), ds);
  ASSERT_EQ(four.metrics.iters.size(), one.metrics.iters.size());
  ASSERT_EQ(four.metrics.iters.size(), 24u);
  for (std::size_t i = 0; i < one.metrics.iters.size(); ++i) {
    const double a = four.metrics.iters[i].loss, b = one.metrics.iters[i].loss;
    ASSERT_LE(std::fabs(a - b), 1e-5 * std::fabs(b)) << "iter " << i;
  }
  EXPECT_LT(one.metrics.iters.back().loss, one.metrics.iters.front().loss);
  EXPECT_TRUE(four.replicas_identical);
}

TEST(SsgdRun, ReplicasStayIdenticalWithLiveBn) {
  auto ds = desk_data();
  auto res = ssgd_run(desk_config(3, 8, false), ds);
  EXPECT_TRUE(res.replicas_identical);
  ASSERT_EQ(res.replica_params.size(), 3u);
  EXPECT_EQ(nn::max_abs_diff(res.replica_params[1], res.replica_params[2]), 0.0f);
}

TEST(SsgdRun, ByteCountersMatchRingFormulaEveryIteration) {
  auto ds = desk_data();
  auto cfg = desk_config(4, 8, true, 2);
  auto res = ssgd_run(cfg, ds);
  const std::uint64_t model_bytes = 4 * nn::Network(cfg.model).init_params().trainable_scalars();
  std::uint64_t total = 0;
  for (auto b : res.bytes_sent_per_rank) total += b;
  EXPECT_EQ(total, 2 * 3 * model_bytes * res.metrics.iters.size());
  for (const auto& it : res.metrics.iters) {
    const auto [b, e] = chunk_range(model_bytes / 4, 4, 0);
    EXPECT_GE(it.bytes_sent, 3 * 4 * (e - b) - 12);
    EXPECT_LE(it.bytes_sent, 2 * 3 * 4 * (e - b));
    EXPECT_EQ(it.bytes_sent, it.bytes_received);
  }
}

TEST(SsgdRun, DeterministicRerunIsBitIdentical) {
  auto ds = desk_data();
  auto a = ssgd_run(desk_config(2, 16, false), ds);
  auto b = ssgd_run(desk_config(2, 16, false), ds);
  EXPECT_EQ(nn::serialize(a.params), nn::serialize(b.params));
}

TEST(SsgdRun, TcpMatchesInProcess) {
  auto ds = desk_data();
  auto cfg = desk_config(2, 16, false, 2);
  auto mem = ssgd_run(cfg, ds);
  std::vector<nn::ParamSet> finals(2);
  on_tcp_ring(2, [&](Transport& t) { finals[t.rank()] = ssgd_run_worker(cfg, ds, t).params; });
  EXPECT_EQ(nn::serialize(finals[0]), nn::serialize(mem.params));
  EXPECT_EQ(finals[0], finals[1]);
}

TEST(SsgdRun, DivergenceReportsIteration) {
  auto ds = desk_data();
  auto cfg = desk_config(2, 8, false);
  cfg.schedule.lr = sched::constant(sched::Kind::kLr, 1e30, cfg.schedule.lr.total_iters());
  try {
    ssgd_run(cfg, ds);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.iteration(), 0);
    EXPECT_LT(e.iteration(), cfg.schedule.lr.total_iters());
  }
}

TEST(SsgdRun, CollapsedEnsembleCapturesFiveSnapshots) {
  auto ds = desk_data();
  auto cfg = desk_config(2, 16, false);
  const long ipe = data::iters_per_epoch(256, 32);
  cfg.schedule = sched::build_collapsed_ensemble(sched::ScalingRule{0.8, 6.4, 1.0}, 32, ipe, 12);
  std::vector<int> hooked;
  RunHooks hooks;
  hooks.on_snapshot = [&](const ensemble::Snapshot& s, const ensemble::CaptureResult& r) {
    EXPECT_TRUE(r.ok);
    hooked.push_back(s.epoch);
  };
  auto res = ssgd_run(cfg, ds, hooks);
  ASSERT_EQ(res.snapshots.size(), 5u);
  EXPECT_EQ(hooked, (std::vector<int>{6, 8, 9, 11, 12}));
  EXPECT_EQ(res.snapshots[0].cycle, 1);
  EXPECT_EQ(res.snapshots[4].params, res.params);
  EXPECT_EQ(res.metrics.epochs.size(), 12u);
}

TEST(SsgdRun, ShortRunHasNoSnapshots) {
  auto ds = desk_data();
  auto cfg = desk_config(1, 32, false);
  const long ipe = data::iters_per_epoch(256, 32);
  auto full = sched::build_collapsed_ensemble(sched::ScalingRule{0.8, 6.4, 1.0}, 32, ipe, 120);
  // Keep the first 45 epochs only.
  std::vector<sched::Segment> segs;
  for (auto s : full.lr.segments())
    if (s.start_iter < 45 * ipe) {
      if (s.end_iter > 45 * ipe) throw std::logic_error("unexpected boundary");
      segs.push_back(s);
    }
  cfg.schedule.lr = sched::ScheduleSpec(sched::Kind::kLr, segs);
  cfg.schedule.wd = sched::constant(sched::Kind::kWeightDecay, 1e-4, cfg.schedule.lr.total_iters());
  cfg.schedule.augmentation_off_at = cfg.schedule.lr.total_iters();
  cfg.schedule.snapshot_epochs = full.snapshot_epochs;
  cfg.evaluate_epochs = false;
  auto res = ssgd_run(cfg, ds);
  EXPECT_TRUE(res.snapshots.empty());
}

TEST(SsgdRun, ConfigErrors) {
  auto ds = desk_data();
  auto cfg = desk_config(3, 10, false);
  cfg.model.classes = 5;
  EXPECT_THROW(ssgd_run(cfg, ds), ConfigError);
  cfg = desk_config(2, 8, false);
  cfg.model.input_shape = {1, 9, 9};
  EXPECT_THROW(ssgd_run(cfg, ds), ConfigError);
  cfg = desk_config(2, 8, false);
  cfg.cluster.local_batch = 200;
  EXPECT_THROW(ssgd_run(cfg, ds), ConfigError);
  cfg = desk_config(2, 8, false);
  cfg.cluster.transport = TransportKind::kTcp;
  EXPECT_THROW(cfg.cluster.validate(), ConfigError);
}
