// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ssgd/dist/ssgd_runner.hpp"
#include "ssgd/ensemble/ensemble.hpp"
#include "ssgd/harness/config.hpp"

namespace ssgd::harness {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDiverged = 3, kTransportFailure = 4 };

// One process of a multi-process TCP run.
struct TcpFlags {
  std::optional<std::size_t> rank;
  std::vector<std::string> peers;  // host:port per rank; overrides cluster.peers
  std::string listen;              // bind address; default is this rank's peer entry
};

// Applies TcpFlags to the config (transport, endpoints) and validates them.
RunConfig apply_tcp_flags(RunConfig cfg, const TcpFlags& flags);

// Artifacts under cfg.output_dir (rank 0 only):
//   config.resolved.json, metrics.jsonl (one object per iteration),
//   epochs.csv, final.params, summary.json, snapshots/ when the schedule has any.
// metrics.jsonl and epochs.csv are flushed at every epoch end.
dist::RunResult cmd_train(const RunConfig& cfg, const TcpFlags& flags, std::ostream& log);

ensemble::EvalMetrics cmd_eval(const RunConfig& cfg, const std::filesystem::path& params_file);

struct EnsembleReport {
  std::vector<ensemble::Snapshot> members;
  ensemble::EvalMetrics combined;
};
EnsembleReport cmd_ensemble_eval(const RunConfig& cfg, const std::filesystem::path& snapshot_dir,
                                 ensemble::Combination how);

void cmd_schedule_dump(const RunConfig& cfg, long stride, std::ostream& out);
void cmd_make_synthetic(const RunConfig& cfg, const std::filesystem::path& dir);

// Column sets of the emitted metrics files.
extern const std::vector<std::string> kIterColumns;
extern const std::vector<std::string> kEpochColumns;

// Full command line front end; returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace ssgd::harness
