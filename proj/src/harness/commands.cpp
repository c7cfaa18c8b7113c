// SPDX-License-Identifier: Apache-2.0
#include "ssgd/harness/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "ssgd/dist/tcp_transport.hpp"
#include "ssgd/error.hpp"
#include "ssgd/perf/perf_model.hpp"

namespace ssgd::harness {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kIterColumns = {"iter",    "lr",         "weight_decay",  "loss",
                                                "wall_ms", "bytes_sent", "bytes_received"};
const std::vector<std::string> kEpochColumns = {"epoch",    "wall_seconds", "train_loss", "val_loss",
                                                 "val_top1", "val_top5",     "evaluated"};

namespace {

json metrics_json(const ensemble::EvalMetrics& m) {
  return {{"loss", m.loss}, {"top1", m.top1}, {"top5", m.top5}, {"examples", m.examples}};
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << std::setprecision(10);
  return f;
}

// Writes rank 0's metrics as the run goes.
class RunWriter {
 public:
  RunWriter(const fs::path& dir, std::ostream& log) : log_(log) {
    iters_ = open_out(dir / "metrics.jsonl");
    epochs_ = open_out(dir / "epochs.csv");
    for (std::size_t i = 0; i < kEpochColumns.size(); ++i) epochs_ << (i ? "," : "") << kEpochColumns[i];
    epochs_ << "\n" << std::flush;
  }

  dist::RunHooks hooks() {
    dist::RunHooks h;
    h.on_iter = [this](const dist::IterRecord& r) {
      json j = {{"iter", r.iter},       {"lr", r.lr},
                {"weight_decay", r.weight_decay}, {"loss", r.loss},
                {"wall_ms", r.wall_ms}, {"bytes_sent", r.bytes_sent},
                {"bytes_received", r.bytes_received}};
      iters_ << j.dump() << "\n";
    };
    h.on_epoch = [this](const dist::EpochRecord& e) {
      epochs_ << e.epoch << "," << e.wall_seconds << "," << e.train_loss << ",";
      if (e.evaluated)
        epochs_ << e.val.loss << "," << e.val.top1 << "," << e.val.top5 << ",1\n";
      else
        epochs_ << ",,,0\n";
      epochs_.flush();
      iters_.flush();
      log_ << "epoch " << e.epoch << "  train_loss " << e.train_loss;
      if (e.evaluated) log_ << "  val_top1 " << e.val.top1 << "  val_loss " << e.val.loss;
      log_ << "  " << e.wall_seconds << " s\n" << std::flush;
    };
    h.on_snapshot = [this](const ensemble::Snapshot& s, const ensemble::CaptureResult& c) {
      log_ << "snapshot epoch " << s.epoch << " (cycle " << s.cycle << ")  top1 " << s.eval.top1;
      if (!c.ok) log_ << "  NOT SAVED: " << c.error;
      log_ << "\n" << std::flush;
    };
    return h;
  }

 private:
  std::ostream& log_;
  std::ofstream iters_;
  std::ofstream epochs_;
};

void write_summary(const fs::path& dir, const RunConfig& cfg, const data::Dataset& ds, const dist::RunResult& res) {
  nn::Network net(cfg.model);
  json j;
  j["final"] = metrics_json(ensemble::evaluate_model(net, res.params, ds));
  j["iters_per_epoch"] = res.iters_per_epoch;
  j["global_batch"] = cfg.cluster.global_batch();
  j["workers"] = cfg.cluster.n_workers;
  std::vector<double> secs;
  for (const auto& e : res.metrics.epochs) secs.push_back(e.wall_seconds);
  if (!secs.empty()) {
    auto row = perf::row_from_epoch_times(cfg.cluster.n_workers, cfg.cluster.local_batch, secs);
    perf::PerfTable t({row}, static_cast<double>(ds.n_train()));
    j["seconds_per_epoch"] = row.seconds_per_epoch;
    j["throughput"] = perf::throughput(t, t.rows()[0]);
  }
  json snaps = json::array();
  std::vector<nn::ParamSet> members;
  for (std::size_t k = 0; k < res.snapshots.size(); ++k) {
    const auto& s = res.snapshots[k];
    snaps.push_back({{"epoch", s.epoch},
                     {"cycle", s.cycle},
                     {"saved", res.captures[k].ok},
                     {"eval", metrics_json(s.eval)}});
    members.push_back(s.params);
  }
  j["snapshots"] = snaps;
  if (!members.empty()) j["ensemble"] = metrics_json(ensemble::ensemble_eval(net, members, ds));
  std::ofstream f = open_out(dir / "summary.json");
  f << j.dump(2) << "\n";
}

}  // namespace

RunConfig apply_tcp_flags(RunConfig cfg, const TcpFlags& flags) {
  if (!flags.peers.empty()) {
    cfg.cluster.endpoints.clear();
    for (const auto& p : flags.peers) cfg.cluster.endpoints.push_back(dist::Endpoint::parse(p));
    cfg.cluster.transport = dist::TransportKind::kTcp;
  }
  if (cfg.cluster.transport == dist::TransportKind::kTcp) {
    if (!flags.rank) throw ConfigError("tcp transport needs --rank");
    if (*flags.rank >= cfg.cluster.endpoints.size())
      throw ConfigError("--rank " + std::to_string(*flags.rank) + " is out of range for " +
                        std::to_string(cfg.cluster.endpoints.size()) + " peers");
    if (cfg.cluster.n_workers != cfg.cluster.endpoints.size())
      throw ConfigError("cluster.workers is " + std::to_string(cfg.cluster.n_workers) + " but " +
                        std::to_string(cfg.cluster.endpoints.size()) + " peers were given");
  } else if (flags.rank || !flags.listen.empty()) {
    throw ConfigError("--rank/--listen need a tcp transport (set --peers or cluster.transport)");
  }
  cfg.cluster.validate();
  return cfg;
}

dist::RunResult cmd_train(const RunConfig& in, const TcpFlags& flags, std::ostream& log) {
  const RunConfig cfg = apply_tcp_flags(in, flags);
  const bool tcp = cfg.cluster.transport == dist::TransportKind::kTcp;
  const bool lead = !tcp || *flags.rank == 0;
  const data::Dataset ds = load_dataset(cfg.data);
  dist::TrainConfig tc = train_config(cfg, ds);
  const fs::path dir = cfg.output_dir;

  std::optional<RunWriter> writer;
  dist::RunHooks hooks;
  if (lead) {
    fs::create_directories(dir);
    save_config(cfg, dir / "config.resolved.json");
    if (!tc.schedule.snapshot_epochs.empty()) tc.snapshot_dir = dir / "snapshots";
    writer.emplace(dir, log);
    hooks = writer->hooks();
  }
  log << "training " << tc.schedule.lr.total_iters() << " iterations on " << cfg.cluster.n_workers
      << " worker(s), global batch " << cfg.cluster.global_batch() << "\n"
      << std::flush;

  dist::RunResult res;
  if (!tcp) {
    res = dist::ssgd_run(tc, ds, hooks);
  } else {
    const std::size_t r = *flags.rank;
    dist::TcpListener listener = dist::TcpListener::bind(
        flags.listen.empty() ? cfg.cluster.endpoints[r] : dist::Endpoint::parse(flags.listen));
    dist::TcpOptions opts;
    opts.connect_timeout = std::chrono::milliseconds(static_cast<long>(cfg.cluster.connect_timeout_s * 1000.0));
    dist::TcpTransport t(r, cfg.cluster.endpoints, std::move(listener), opts);
    res = dist::ssgd_run_worker(tc, ds, t, hooks);
  }
  if (lead) {
    nn::save_params(res.params, dir / "final.params");
    write_summary(dir, cfg, ds, res);
  }
  return res;
}

ensemble::EvalMetrics cmd_eval(const RunConfig& cfg, const fs::path& params_file) {
  const data::Dataset ds = load_dataset(cfg.data);
  nn::Network net(cfg.model);
  return ensemble::evaluate_model(net, nn::load_params(params_file), ds);
}

EnsembleReport cmd_ensemble_eval(const RunConfig& cfg, const fs::path& snapshot_dir, ensemble::Combination how) {
  const data::Dataset ds = load_dataset(cfg.data);
  nn::Network net(cfg.model);
  EnsembleReport rep;
  rep.members = ensemble::load_snapshots(snapshot_dir);
  if (rep.members.empty()) throw ConfigError("no snapshots in " + snapshot_dir.string());
  std::vector<nn::ParamSet> ps;
  for (auto& m : rep.members) {
    m.eval = ensemble::evaluate_model(net, m.params, ds);
    ps.push_back(m.params);
  }
  rep.combined = ensemble::ensemble_eval(net, ps, ds, how);
  return rep;
}

void cmd_schedule_dump(const RunConfig& cfg, long stride, std::ostream& out) {
  const data::Dataset ds = load_dataset(cfg.data);
  const long ipe = data::iters_per_epoch(ds.n_train(), cfg.cluster.global_batch());
  sched::write_curve_csv(out, sched::dump_curve(resolve_schedule(cfg, ipe), stride, ipe));
}

void cmd_make_synthetic(const RunConfig& cfg, const fs::path& dir) {
  if (cfg.data.source != DataSource::kSynthetic) throw ConfigError("make-synthetic needs data.source = synthetic");
  data::save_idx_dataset(data::make_synthetic(cfg.data.synthetic), dir);
}

namespace {

perf::PerfTable table_by_name(const std::string& name, double dataset_size) {
  fs::path p = name;
  if (name == "stampede2" || name == "marenostrum4") p = fs::path(SSGD_DATA_DIR) / (name + ".csv");
  return perf::load_perf_csv(p, dataset_size);
}

// Run directory or explicit config; returns the config and its run dir (may be empty).
RunConfig config_for(const std::string& config, const std::string& run) {
  if (!config.empty()) return load_config(config);
  if (!run.empty()) return load_config(fs::path(run) / "config.resolved.json");
  throw ConfigError("need --config or --run");
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synchronous data-parallel SGD: training, evaluation, schedules and performance projections"};
  app.require_subcommand(1);

  std::string config, run, params, snapshots, combine = "prob", out_path, table, listen;
  TcpFlags tcp;
  std::size_t rank = 0;
  long stride = 1;
  std::size_t workers = 0, local_batch = 0, efficiency_base = 0;
  std::vector<double> targets;
  double dataset_size = perf::kImageNetTrainSize;

  auto* train = app.add_subcommand("train", "Run SSGD training and write artifacts to output_dir");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--output-dir", out_path, "Override output_dir");
  auto* rank_opt = train->add_option("--rank", rank, "This process's rank (tcp)");
  train->add_option("--peers", tcp.peers, "host:port of every rank, in ring order (tcp)")->delimiter(',');
  train->add_option("--listen", listen, "Bind address host:port (default: own peer entry)");

  auto* eval = app.add_subcommand("eval", "Evaluate saved parameters on the validation split");
  eval->add_option("--config", config, "Run config");
  eval->add_option("--run", run, "Run directory (uses config.resolved.json and final.params)");
  eval->add_option("--params", params, "Parameter file");

  auto* ens = app.add_subcommand("ensemble-eval", "Evaluate the collapsed ensemble of stored snapshots");
  ens->add_option("--config", config, "Run config");
  ens->add_option("--run", run, "Run directory (uses its snapshots/)");
  ens->add_option("--snapshots", snapshots, "Snapshot directory");
  ens->add_option("--combine", combine, "prob or logit")->check(CLI::IsMember({"prob", "logit"}));

  auto* proj = app.add_subcommand("project", "Project time to accuracy from a time-per-epoch table");
  proj->add_option("--table", table, "stampede2, marenostrum4 or a CSV path")->required();
  proj->add_option("--workers", workers, "Workers (nodes or CPUs, as in the table)")->required();
  proj->add_option("--local-batch", local_batch, "Local batch size")->required();
  proj->add_option("--target", targets, "Top-1 target(s) in percent (default: all known)");
  proj->add_option("--efficiency-base", efficiency_base, "Also report weak-scaling efficiency from this many workers");
  proj->add_option("--dataset-size", dataset_size, "Training images per epoch");

  auto* dump = app.add_subcommand("schedule-dump", "Write the resolved lr / weight-decay curve as CSV");
  dump->add_option("--config", config, "Run config")->required();
  dump->add_option("--stride", stride, "Iterations between rows")->check(CLI::PositiveNumber);
  dump->add_option("--out", out_path, "Output file (default: stdout)");

  auto* synth = app.add_subcommand("make-synthetic", "Write the config's synthetic dataset as IDX files");
  synth->add_option("--config", config, "Run config")->required();
  synth->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (train->parsed()) {
      RunConfig cfg = load_config(config);
      if (!out_path.empty()) cfg.output_dir = out_path;
      if (*rank_opt) tcp.rank = rank;
      tcp.listen = listen;
      auto res = cmd_train(cfg, tcp, out);
      if (!tcp.rank || *tcp.rank == 0) out << "wrote " << cfg.output_dir.string() << "\n";
      (void)res;
    } else if (eval->parsed()) {
      const RunConfig cfg = config_for(config, run);
      fs::path p = params;
      if (p.empty()) {
        if (run.empty()) throw ConfigError("need --params or --run");
        p = fs::path(run) / "final.params";
      }
      out << metrics_json(cmd_eval(cfg, p)).dump(2) << "\n";
    } else if (ens->parsed()) {
      const RunConfig cfg = config_for(config, run);
      fs::path dir = snapshots;
      if (dir.empty()) {
        if (run.empty()) throw ConfigError("need --snapshots or --run");
        dir = fs::path(run) / "snapshots";
      }
      auto rep = cmd_ensemble_eval(cfg, dir,
                                   combine == "logit" ? ensemble::Combination::kLogitMean
                                                      : ensemble::Combination::kProbabilityMean);
      json j;
      j["members"] = json::array();
      for (const auto& m : rep.members)
        j["members"].push_back({{"epoch", m.epoch}, {"cycle", m.cycle}, {"eval", metrics_json(m.eval)}});
      j["ensemble"] = metrics_json(rep.combined);
      out << j.dump(2) << "\n";
    } else if (proj->parsed()) {
      const auto t = table_by_name(table, dataset_size);
      const perf::AccuracyEpochMap map;
      if (targets.empty())
        for (const auto& [target, e] : map.targets()) targets.push_back(target);
      const auto& row = t.row(workers, local_batch);
      out << "workers " << workers << ", local batch " << local_batch << ": " << row.seconds_per_epoch
          << " s/epoch, " << std::lround(perf::throughput(t, row)) << " img/s\n";
      for (double target : targets)
        out << "TT-" << target << "%: " << perf::project_ttt(t, workers, local_batch, target, map) << " min\n";
      if (efficiency_base)
        out << "weak scaling efficiency " << efficiency_base << " -> " << workers << ": " << std::setprecision(3)
            << perf::scaling_efficiency(t, efficiency_base, workers, local_batch) << "\n";
    } else if (dump->parsed()) {
      const RunConfig cfg = load_config(config);
      if (out_path.empty()) {
        cmd_schedule_dump(cfg, stride, out);
      } else {
        std::ofstream f = open_out(out_path);
        cmd_schedule_dump(cfg, stride, f);
      }
    } else if (synth->parsed()) {
      cmd_make_synthetic(load_config(config), out_path);
      out << "wrote " << out_path << "\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DivergenceError& e) {
    err << "diverged at iteration " << e.iteration() << ": " << e.what() << "\n";
    return kDiverged;
  } catch (const TransportError& e) {
    err << "transport failure: " << e.what() << "\n";
    return kTransportFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace ssgd::harness
