// SPDX-License-Identifier: Apache-2.0
#include "ssgd/perf/perf_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ssgd/error.hpp"

namespace ssgd::perf {

namespace {

std::string pair_str(std::size_t n, std::size_t b) {
  return "(" + std::to_string(n) + " workers, b=" + std::to_string(b) + ")";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(trim(f));
  return out;
}

double number(const std::string& f, int line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(f, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != f.size() || !std::isfinite(v))
    throw FormatError("perf csv line " + std::to_string(line) + ": bad number '" + f + "'");
  return v;
}

std::size_t count(const std::string& f, int line) {
  const double v = number(f, line);
  if (v < 1 || v != std::floor(v))
    throw FormatError("perf csv line " + std::to_string(line) + ": expected a positive integer, got '" + f + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

PerfTable::PerfTable(std::vector<PerfRow> rows, double dataset_size)
    : rows_(std::move(rows)), dataset_size_(dataset_size) {
  if (!(dataset_size_ > 0.0)) throw ConfigError("perf table: dataset size must be positive");
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    if (r.n_workers == 0 || r.local_batch == 0) throw ConfigError("perf table: zero workers or batch");
    if (!(r.seconds_per_epoch > 0.0))
      throw ConfigError("perf table: seconds_per_epoch must be positive for " + pair_str(r.n_workers, r.local_batch));
    if (r.throughput) {
      const double implied = *r.throughput * r.seconds_per_epoch;
      if (std::fabs(implied - dataset_size_) > 0.01 * dataset_size_)
        throw ConfigError("perf table: throughput x time per epoch = " + std::to_string(implied) +
                          " is not within 1% of the dataset size for " + pair_str(r.n_workers, r.local_batch));
    }
    for (std::size_t j = 0; j < i; ++j)
      if (rows_[j].n_workers == r.n_workers && rows_[j].local_batch == r.local_batch)
        throw ConfigError("perf table: duplicate row " + pair_str(r.n_workers, r.local_batch));
  }
}

const PerfRow* PerfTable::find(std::size_t n_workers, std::size_t local_batch) const {
  for (const auto& r : rows_)
    if (r.n_workers == n_workers && r.local_batch == local_batch) return &r;
  return nullptr;
}

std::string PerfTable::known_configs() const {
  std::string s;
  for (const auto& r : rows_) s += (s.empty() ? "" : ", ") + pair_str(r.n_workers, r.local_batch);
  return s.empty() ? "none" : s;
}

const PerfRow& PerfTable::row(std::size_t n_workers, std::size_t local_batch) const {
  if (const auto* r = find(n_workers, local_batch)) return *r;
  throw ConfigError("no calibration row for " + pair_str(n_workers, local_batch) + "; known: " + known_configs());
}

PerfTable parse_perf_csv(const std::string& text, double dataset_size) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  std::vector<std::string> header;
  std::vector<PerfRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto f = split(line);
    if (header.empty()) {
      header = f;
      const std::vector<std::string> base = {"n_workers", "local_batch", "seconds_per_epoch"};
      const bool ok = (f.size() == 3 || (f.size() == 4 && f[3] == "throughput")) &&
                      std::equal(base.begin(), base.end(), f.begin());
      if (!ok) throw FormatError("perf csv: header must be n_workers,local_batch,seconds_per_epoch[,throughput]");
      continue;
    }
    if (f.size() != header.size())
      throw FormatError("perf csv line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(f.size()));
    PerfRow r;
    r.n_workers = count(f[0], lineno);
    r.local_batch = count(f[1], lineno);
    r.seconds_per_epoch = number(f[2], lineno);
    if (f.size() == 4 && !f[3].empty()) r.throughput = number(f[3], lineno);
    rows.push_back(r);
  }
  if (header.empty()) throw FormatError("perf csv: empty");
  return PerfTable(std::move(rows), dataset_size);
}

PerfTable load_perf_csv(const std::filesystem::path& path, double dataset_size) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open perf table " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_perf_csv(ss.str(), dataset_size);
}

AccuracyEpochMap::AccuracyEpochMap() : AccuracyEpochMap({{75.5, 48.0}, {76.0, 64.0}, {76.5, 78.0}}) {}

AccuracyEpochMap::AccuracyEpochMap(std::map<double, double> targets) : targets_(std::move(targets)) {
  double prev = -1.0;
  for (const auto& [t, e] : targets_) {
    if (!(e >= 0.0)) throw ConfigError("accuracy map: epochs must be non-negative");
    if (e < prev) throw ConfigError("accuracy map: a higher target cannot need fewer epochs");
    prev = e;
  }
}

double AccuracyEpochMap::epochs(double target) const {
  for (const auto& [t, e] : targets_)
    if (std::fabs(t - target) < 1e-9) return e;
  std::string known;
  for (const auto& [t, e] : targets_) {
    std::ostringstream s;
    s << t;
    known += (known.empty() ? "" : ", ") + s.str();
  }
  std::ostringstream s;
  s << target;
  throw ConfigError("no epoch count for target " + s.str() + "%; known targets: " + known);
}

long project_minutes(double epochs, double seconds_per_epoch) {
  return static_cast<long>(std::floor(epochs * seconds_per_epoch / 60.0 + 0.5));
}

long project_ttt(const PerfTable& table, std::size_t n_workers, std::size_t local_batch, double target,
                 const AccuracyEpochMap& map) {
  const double epochs = map.epochs(target);
  return project_minutes(epochs, table.row(n_workers, local_batch).seconds_per_epoch);
}

double scaling_efficiency(const PerfTable& table, std::size_t base_workers, std::size_t scaled_workers,
                          std::size_t local_batch) {
  const auto& base = table.row(base_workers, local_batch);
  const auto& scaled = table.row(scaled_workers, local_batch);
  return (base.seconds_per_epoch / scaled.seconds_per_epoch) /
         (static_cast<double>(scaled_workers) / static_cast<double>(base_workers));
}

std::vector<SpeedupPoint> speedup_curve(const PerfTable& table, std::size_t local_batch,
                                        std::size_t reference_workers) {
  const auto& ref = table.row(reference_workers, local_batch);
  std::vector<SpeedupPoint> out;
  for (const auto& r : table.rows())
    if (r.local_batch == local_batch)
      out.push_back({r.n_workers, ref.seconds_per_epoch / r.seconds_per_epoch,
                     static_cast<double>(r.n_workers) / static_cast<double>(reference_workers)});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.n_workers < b.n_workers; });
  return out;
}

double throughput(const PerfTable& table, const PerfRow& row) { return table.dataset_size() / row.seconds_per_epoch; }

PerfRow row_from_epoch_times(std::size_t n_workers, std::size_t local_batch, const std::vector<double>& seconds) {
  if (seconds.empty()) throw ConfigError("no epoch times to calibrate from");
  PerfRow r;
  r.n_workers = n_workers;
  r.local_batch = local_batch;
  r.seconds_per_epoch = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
  return r;
}

}  // namespace ssgd::perf
