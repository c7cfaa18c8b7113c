// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "ssgd/error.hpp"
#include "ssgd/harness/commands.hpp"
#include "ssgd/harness/config.hpp"

using namespace ssgd;
using namespace ssgd::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ssgd_harness_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json minimal() {
  return json::parse(R"({
    "schema_version": 1,
    "model": {"input_shape": [1, 6, 6], "hidden": [16], "classes": 4, "seed": 3},
    "data": {"source": "synthetic",
             "synthetic": {"classes": 4, "n_train": 128, "n_val": 64, "geometry": [1, 8, 8], "seed": 2}},
    "cluster": {"workers": 1, "local_batch": 16},
    "schedule": {"name": "linear", "base_lr_per_256": 0.8, "warmup_epochs": 0.5},
    "epochs": 1
  })");
}

fs::path write_json(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  std::ofstream(dir / name) << j.dump(2);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Cli {
  int code;
  std::string out, err;
};

Cli cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ssgd");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c = config_from_json(minimal());
  const json j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
  EXPECT_EQ(c.model.classes, 4u);
  EXPECT_DOUBLE_EQ(c.optimizer.momentum, 0.9);
  EXPECT_EQ(c.schedule.name, ScheduleName::kLinear);
}

TEST(Config, RandomConfigsRoundTripLosslessly) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const char* names[] = {"linear", "3step", "final_collapse", "collapsed_ensemble", "constant"};
  for (int trial = 0; trial < 50; ++trial) {
    json j = minimal();
    j["schedule"] = {{"name", names[trial % 5]},
                     {"base_lr_per_256", 0.05 + u(rng)},
                     {"warmup_epochs", 0.1 + u(rng)},
                     {"weight_decay", 1e-4 * u(rng)},
                     {"collapse_epochs", 3.0 + 7.0 * u(rng)}};
    j["optimizer"] = {{"momentum", 0.99 * u(rng)}, {"decay_bn_affine", trial % 2 == 0}};
    j["augment"] = {{"area", {0.05 + 0.1 * u(rng), 1.0}}, {"aspect", {0.7, 1.0 / 0.7}}, {"crop", "center"}};
    j["seed"] = rng();
    j["cluster"]["deterministic"] = trial % 3 != 0;
    const RunConfig c = config_from_json(j);
    const json out = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(json::parse(out.dump()))), out);
    EXPECT_EQ(out["seed"].get<std::uint64_t>(), j["seed"].get<std::uint64_t>());
  }
}

TEST(Config, UnknownKeysAreErrors) {
  for (const char* path : {"/lerning_rate", "/model/hiden", "/model/bn/momentum", "/schedule/warmup", "/cluster/nodes",
                           "/data/synthetic/size"}) {
    json j = minimal();
    j[json::json_pointer(path)] = 1;
    try {
      config_from_json(j);
      FAIL() << path;
    } catch (const ConfigError& e) {
      std::string key = std::string(path).substr(1);
      std::replace(key.begin(), key.end(), '/', '.');
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  }
}

TEST(Config, SchemaAndTypeErrors) {
  json j = minimal();
  j.erase("schema_version");
  EXPECT_THROW(config_from_json(j), ConfigError);
  j["schema_version"] = 2;
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal();
  j["epochs"] = "ninety";
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal();
  j["cluster"]["workers"] = -2;
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal();
  j["schedule"]["name"] = "cosine";
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal();
  j["optimizer"] = {{"momentum", 1.0}};
  EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Config, IdxPathResolvesAgainstConfigFile) {
  auto dir = scratch("idx");
  json j = minimal();
  j["data"] = {{"source", "idx"}, {"path", "imgs"}};
  auto c = load_config(write_json(dir, j));
  EXPECT_EQ(c.data.idx_dir, (dir / "imgs").lexically_normal());
  fs::remove_all(dir);
}

TEST(Config, ScheduleResolution) {
  json j = minimal();
  j["epochs"] = 120;
  j["schedule"] = {{"name", "collapsed_ensemble"}, {"warmup_epochs", 1.0}, {"base_lr_per_256", 0.8}};
  const RunConfig c = config_from_json(j);
  const auto b = resolve_schedule(c, 8);
  EXPECT_EQ(b.lr.total_iters(), 960);
  EXPECT_EQ(b.snapshot_epochs, (std::vector<double>{60, 75, 90, 105, 120}));
  j["schedule"] = {{"name", "final_collapse"}, {"collapse_epochs", 5.0}, {"warmup_epochs", 1.0}};
  j["epochs"] = 20;
  const auto f = resolve_schedule(config_from_json(j), 8);
  EXPECT_EQ(f.augmentation_off_at, 15 * 8);
  EXPECT_DOUBLE_EQ(f.wd.at(0), 0.00005);
  EXPECT_DOUBLE_EQ(f.wd.at(15 * 8), 0.0001);
}

TEST(Cli, TrainWritesAllArtifacts) {
  auto dir = scratch("train");
  json j = minimal();
  j["epochs"] = 2;
  j["output_dir"] = (dir / "out").string();
  auto r = cli({"train", "--config", write_json(dir, j).string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.resolved.json", "metrics.jsonl", "epochs.csv", "final.params", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  EXPECT_FALSE(fs::exists(dir / "out" / "snapshots"));

  // The resolved config reproduces itself.
  const auto resolved = json::parse(slurp(dir / "out" / "config.resolved.json"));
  EXPECT_EQ(config_to_json(config_from_json(resolved)), resolved);

  // Every metrics row has exactly the fixed column set.
  std::ifstream m(dir / "out" / "metrics.jsonl");
  std::string line;
  int rows = 0;
  while (std::getline(m, line)) {
    auto row = json::parse(line);
    EXPECT_EQ(row.size(), kIterColumns.size());
    for (const auto& c : kIterColumns) EXPECT_TRUE(row.contains(c)) << c;
    EXPECT_EQ(row["iter"].get<int>(), rows);
    ++rows;
  }
  EXPECT_EQ(rows, 16);
  std::ifstream e(dir / "out" / "epochs.csv");
  std::getline(e, line);
  EXPECT_EQ(line, "epoch,wall_seconds,train_loss,val_loss,val_top1,val_top5,evaluated");
  int epochs = 0;
  while (std::getline(e, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
    ++epochs;
  }
  EXPECT_EQ(epochs, 2);

  auto ev = cli({"eval", "--run", (dir / "out").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto summary = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_EQ(json::parse(ev.out)["top1"], summary["final"]["top1"]);
  fs::remove_all(dir);
}

TEST(Cli, DeterministicRerunIsByteIdentical) {
  auto dir = scratch("rerun");
  json j = minimal();
  j["cluster"]["workers"] = 2;
  j["cluster"]["local_batch"] = 8;
  j["model"]["bn"] = {{"frozen_statistics", false}};
  const auto cfg = write_json(dir, j);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--output-dir", (dir / "a").string()}).code, 0);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--output-dir", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "final.params"), slurp(dir / "b" / "final.params"));
  fs::remove_all(dir);
}

TEST(Cli, CollapsedEnsembleRunStoresFiveSnapshots) {
  auto dir = scratch("ens");
  json j = minimal();
  j["epochs"] = 12;
  j["schedule"] = {{"name", "collapsed_ensemble"}, {"warmup_epochs", 0.5}, {"base_lr_per_256", 0.8}};
  j["evaluate_epochs"] = false;
  j["output_dir"] = (dir / "out").string();
  auto r = cli({"train", "--config", write_json(dir, j).string()});
  ASSERT_EQ(r.code, 0) << r.err;
  int params = 0;
  for (const auto& f : fs::directory_iterator(dir / "out" / "snapshots")) params += f.path().extension() == ".params";
  EXPECT_EQ(params, 5);
  auto ev = cli({"ensemble-eval", "--run", (dir / "out").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto rep = json::parse(ev.out);
  EXPECT_EQ(rep["members"].size(), 5u);
  const auto summary = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_EQ(rep["ensemble"]["top1"], summary["ensemble"]["top1"]);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  auto dir = scratch("codes");
  json j = minimal();
  j["output_dir"] = (dir / "out").string();
  EXPECT_EQ(cli({}).code, kConfigError);
  EXPECT_EQ(cli({"train"}).code, kConfigError);
  EXPECT_EQ(cli({"train", "--config", (dir / "missing.json").string()}).code, kConfigError);
  json bad = j;
  bad["typo"] = 1;
  EXPECT_EQ(cli({"train", "--config", write_json(dir, bad, "bad.json").string()}).code, kConfigError);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(cli({"train", "--config", (dir / "broken.json").string()}).code, kConfigError);

  json div = j;
  div["schedule"] = {{"name", "constant"}, {"lr", 1e30}};
  auto r = cli({"train", "--config", write_json(dir, div, "div.json").string()});
  EXPECT_EQ(r.code, kDiverged) << r.err;
  EXPECT_NE(r.err.find("iteration"), std::string::npos);

  // Rank 1 never shows up.
  json tcp = j;
  tcp["cluster"] = {{"workers", 2}, {"local_batch", 8}, {"connect_timeout_s", 0.5}};
  r = cli({"train", "--config", write_json(dir, tcp, "tcp.json").string(), "--rank", "0", "--peers",
           "127.0.0.1:1,127.0.0.1:2"});
  EXPECT_EQ(r.code, kTransportFailure) << r.err;

  EXPECT_EQ(cli({"project", "--table", "stampede2", "--workers", "300", "--local-batch", "16"}).code, kConfigError);
  EXPECT_EQ(cli({"eval", "--run", (dir / "nothing").string()}).code, kConfigError);
  fs::remove_all(dir);
}

TEST(Cli, TcpTwoRanksMatchInProcess) {
  auto dir = scratch("tcp");
  json j = minimal();
  j["cluster"] = {{"workers", 2}, {"local_batch", 8}, {"connect_timeout_s", 10}};
  const auto cfg = write_json(dir, j).string();
  ASSERT_EQ(cli({"train", "--config", cfg, "--output-dir", (dir / "mem").string()}).code, 0);
  const std::string peers = "127.0.0.1:47231,127.0.0.1:47232";
  Cli r1;
  std::thread t([&] { r1 = cli({"train", "--config", cfg, "--output-dir", (dir / "r1").string(), "--rank", "1",
                                "--peers", peers}); });
  auto r0 = cli({"train", "--config", cfg, "--output-dir", (dir / "r0").string(), "--rank", "0", "--peers", peers});
  t.join();
  ASSERT_EQ(r0.code, 0) << r0.err;
  ASSERT_EQ(r1.code, 0) << r1.err;
  EXPECT_EQ(slurp(dir / "r0" / "final.params"), slurp(dir / "mem" / "final.params"));
  EXPECT_FALSE(fs::exists(dir / "r1"));
  fs::remove_all(dir);
}

TEST(Cli, ProjectAndScheduleDump) {
  auto r = cli({"project", "--table", "stampede2", "--workers", "256", "--local-batch", "16", "--efficiency-base",
                "256"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("TT-75.5%: 82 min"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("TT-76.5%: 133 min"), std::string::npos) << r.out;
  r = cli({"project", "--table", "marenostrum4", "--workers", "1024", "--local-batch", "16", "--target", "76"});
  EXPECT_NE(r.out.find("TT-76%: 56 min"), std::string::npos) << r.out;

  auto dir = scratch("dump");
  const auto cfg = write_json(dir, minimal()).string();
  r = cli({"schedule-dump", "--config", cfg, "--stride", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "iter,epoch,lr,weight_decay,augmentation_on");
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1 + 2 + 1);  // 0, 4 and the last iteration 7

  r = cli({"make-synthetic", "--config", cfg, "--out", (dir / "idx").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  json j = minimal();
  j["data"] = {{"source", "idx"}, {"path", "idx"}};
  j["output_dir"] = (dir / "idxrun").string();
  r = cli({"train", "--config", write_json(dir, j, "idx.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  json k = minimal();
  k["output_dir"] = (dir / "synrun").string();
  ASSERT_EQ(cli({"train", "--config", write_json(dir, k, "syn.json").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "idxrun" / "final.params"), slurp(dir / "synrun" / "final.params"));
  fs::remove_all(dir);
}
