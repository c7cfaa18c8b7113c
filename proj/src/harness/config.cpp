// SPDX-License-Identifier: Apache-2.0
#include "ssgd/harness/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "ssgd/error.hpp"

namespace ssgd::harness {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and remembers which ones it saw, so
// leftovers can be reported as unknown.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  Obj sub(const std::string& key) {
    const json* v = raw(key);
    static const json empty = json::object();
    return Obj(v ? *v : empty, child(key));
  }

  void num(const std::string& key, double& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) bad(key, "a number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = raw(key)) out = as_int<Int>(*v, child(key));
  }

  void flag(const std::string& key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) bad(key, "true or false");
      out = v->get<bool>();
    }
  }

  void str(const std::string& key, std::string& out) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) bad(key, "a string");
      out = v->get<std::string>();
    }
  }

  template <typename Int>
  void int_list(const std::string& key, std::vector<Int>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array()) bad(key, "an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(as_int<Int>((*v)[i], child(key) + "[" + std::to_string(i) + "]"));
    }
  }

  void range(const std::string& key, double& lo, double& hi) {
    if (const json* v = raw(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
        bad(key, "a [min, max] pair of numbers");
      lo = (*v)[0].get<double>();
      hi = (*v)[1].get<double>();
    }
  }

  // Throws on any key that was never asked for.
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + child(it.key()));
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  [[noreturn]] void bad(const std::string& key, const std::string& want) const {
    throw ConfigError(child(key) + ": expected " + want);
  }

 private:
  template <typename Int>
  static Int as_int(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
    if (v.is_number_integer()) {
      const auto x = v.get<std::int64_t>();
      if (x < 0 && std::is_unsigned_v<Int>) throw ConfigError(path + ": must be non-negative");
      return static_cast<Int>(x);
    }
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d == std::floor(d) && std::fabs(d) < 9e15) {
        if (d < 0 && std::is_unsigned_v<Int>) throw ConfigError(path + ": must be non-negative");
        return static_cast<Int>(d);
      }
    }
    throw ConfigError(path + ": expected an integer");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E pick(const std::string& path, const std::string& value, std::initializer_list<std::pair<const char*, E>> opts) {
  std::string known;
  for (const auto& [name, e] : opts) {
    if (value == name) return e;
    known += (known.empty() ? "" : ", ") + std::string(name);
  }
  throw ConfigError(path + ": unknown value '" + value + "' (expected one of: " + known + ")");
}

const char* arch_str(nn::Architecture a) { return a == nn::Architecture::kMlp ? "mlp" : "small_resnet"; }

void read_model(Obj o, nn::ModelSpec& m) {
  std::string arch = arch_str(m.architecture);
  o.str("architecture", arch);
  m.architecture = pick<nn::Architecture>(o.child("architecture"), arch,
                                          {{"mlp", nn::Architecture::kMlp}, {"small_resnet", nn::Architecture::kSmallResnet}});
  std::vector<std::size_t> shape(m.input_shape.begin(), m.input_shape.end());
  o.int_list("input_shape", shape);
  if (shape.size() != 3) throw ConfigError(o.child("input_shape") + ": expected [channels, height, width]");
  m.input_shape = nn::Shape(shape.begin(), shape.end());
  o.int_list("hidden", m.hidden);
  o.integer("channels", m.channels);
  o.integer("blocks", m.blocks);
  o.integer("classes", m.classes);
  o.integer("seed", m.seed);
  Obj bn = o.sub("bn");
  bn.num("beta", m.bn.beta);
  bn.num("epsilon", m.bn.epsilon);
  double g = m.bn.gamma_init_final_block;
  bn.num("gamma_init_final_block", g);
  m.bn.gamma_init_final_block = static_cast<float>(g);
  bn.flag("frozen_statistics", m.bn.frozen_statistics);
  bn.done();
  o.done();
}

json write_model(const nn::ModelSpec& m) {
  return {{"architecture", arch_str(m.architecture)},
          {"input_shape", std::vector<std::size_t>(m.input_shape.begin(), m.input_shape.end())},
          {"hidden", m.hidden},
          {"channels", m.channels},
          {"blocks", m.blocks},
          {"classes", m.classes},
          {"seed", m.seed},
          {"bn",
           {{"beta", m.bn.beta},
            {"epsilon", m.bn.epsilon},
            {"gamma_init_final_block", static_cast<double>(m.bn.gamma_init_final_block)},
            {"frozen_statistics", m.bn.frozen_statistics}}}};
}

void read_data(Obj o, DataConfig& d) {
  std::string src = d.source == DataSource::kSynthetic ? "synthetic" : "idx";
  o.str("source", src);
  d.source = pick<DataSource>(o.child("source"), src, {{"synthetic", DataSource::kSynthetic}, {"idx", DataSource::kIdx}});
  if (d.source == DataSource::kSynthetic) {
    Obj s = o.sub("synthetic");
    auto& sp = d.synthetic;
    s.integer("classes", sp.classes);
    s.integer("n_train", sp.n_train);
    s.integer("n_val", sp.n_val);
    std::vector<std::size_t> g = {sp.geometry.channels, sp.geometry.height, sp.geometry.width};
    s.int_list("geometry", g);
    if (g.size() != 3) throw ConfigError(s.child("geometry") + ": expected [channels, height, width]");
    sp.geometry = {g[0], g[1], g[2]};
    s.integer("modes_per_class", sp.modes_per_class);
    s.num("noise", sp.noise);
    s.num("label_noise", sp.label_noise);
    s.integer("seed", sp.seed);
    s.done();
  } else {
    std::string p = d.idx_dir.string();
    o.str("path", p);
    if (p.empty()) throw ConfigError(o.child("path") + ": required when source is idx");
    d.idx_dir = p;
    o.integer("classes", d.classes);
  }
  o.done();
}

json write_data(const DataConfig& d) {
  if (d.source == DataSource::kIdx) return {{"source", "idx"}, {"path", d.idx_dir.string()}, {"classes", d.classes}};
  const auto& s = d.synthetic;
  return {{"source", "synthetic"},
          {"synthetic",
           {{"classes", s.classes},
            {"n_train", s.n_train},
            {"n_val", s.n_val},
            {"geometry", {s.geometry.channels, s.geometry.height, s.geometry.width}},
            {"modes_per_class", s.modes_per_class},
            {"noise", s.noise},
            {"label_noise", s.label_noise},
            {"seed", s.seed}}}};
}

void read_cluster(Obj o, dist::ClusterSpec& c) {
  o.integer("workers", c.n_workers);
  o.integer("local_batch", c.local_batch);
  std::string t = c.transport == dist::TransportKind::kTcp ? "tcp" : "inprocess";
  o.str("transport", t);
  c.transport = pick<dist::TransportKind>(o.child("transport"), t,
                                          {{"inprocess", dist::TransportKind::kInProcess}, {"tcp", dist::TransportKind::kTcp}});
  if (const json* peers = o.raw("peers")) {
    if (!peers->is_array()) o.bad("peers", "an array of \"host:port\" strings");
    c.endpoints.clear();
    for (const auto& p : *peers) {
      if (!p.is_string()) o.bad("peers", "an array of \"host:port\" strings");
      c.endpoints.push_back(dist::Endpoint::parse(p.get<std::string>()));
    }
  }
  o.flag("deterministic", c.deterministic);
  o.num("connect_timeout_s", c.connect_timeout_s);
  o.done();
}

json write_cluster(const dist::ClusterSpec& c) {
  json peers = json::array();
  for (const auto& e : c.endpoints) peers.push_back(e.str());
  return {{"workers", c.n_workers},
          {"local_batch", c.local_batch},
          {"transport", c.transport == dist::TransportKind::kTcp ? "tcp" : "inprocess"},
          {"peers", peers},
          {"deterministic", c.deterministic},
          {"connect_timeout_s", c.connect_timeout_s}};
}

void read_schedule(Obj o, ScheduleConfig& s) {
  std::string name = schedule_name_str(s.name);
  o.str("name", name);
  s.name = pick<ScheduleName>(o.child("name"), name,
                              {{"linear", ScheduleName::kLinear},
                               {"3step", ScheduleName::kThreeStep},
                               {"final_collapse", ScheduleName::kFinalCollapse},
                               {"collapsed_ensemble", ScheduleName::kCollapsedEnsemble},
                               {"constant", ScheduleName::kConstant}});
  o.num("base_lr_per_256", s.rule.base_lr_per_256);
  o.num("lr_cap", s.rule.lr_cap);
  o.num("warmup_epochs", s.rule.warmup_epochs);
  o.num("weight_decay", s.weight_decay);
  o.num("lr", s.lr);
  o.num("collapse_epochs", s.collapse_epochs);
  o.num("collapse_wd_before", s.collapse.wd_before);
  o.num("collapse_wd_after", s.collapse.wd_after);
  o.num("no_collapse_wd", s.collapse.wd_no_collapse);
  o.num("ensemble_wd_before", s.ensemble.wd_before);
  o.num("ensemble_wd_after", s.ensemble.wd_after);
  o.done();
}

json write_schedule(const ScheduleConfig& s) {
  return {{"name", schedule_name_str(s.name)},
          {"base_lr_per_256", s.rule.base_lr_per_256},
          {"lr_cap", s.rule.lr_cap},
          {"warmup_epochs", s.rule.warmup_epochs},
          {"weight_decay", s.weight_decay},
          {"lr", s.lr},
          {"collapse_epochs", s.collapse_epochs},
          {"collapse_wd_before", s.collapse.wd_before},
          {"collapse_wd_after", s.collapse.wd_after},
          {"no_collapse_wd", s.collapse.wd_no_collapse},
          {"ensemble_wd_before", s.ensemble.wd_before},
          {"ensemble_wd_after", s.ensemble.wd_after}};
}

void read_augment(Obj o, data::AugmentPolicy& a) {
  o.flag("enabled", a.enabled);
  o.range("area", a.area_min, a.area_max);
  o.range("aspect", a.aspect_min, a.aspect_max);
  std::string crop = a.crop == data::CropMode::kRandom ? "random" : "center";
  o.str("crop", crop);
  a.crop = pick<data::CropMode>(o.child("crop"), crop, {{"random", data::CropMode::kRandom}, {"center", data::CropMode::kCenter}});
  o.done();
}

json write_augment(const data::AugmentPolicy& a) {
  return {{"enabled", a.enabled},
          {"area", {a.area_min, a.area_max}},
          {"aspect", {a.aspect_min, a.aspect_max}},
          {"crop", a.crop == data::CropMode::kRandom ? "random" : "center"}};
}

}  // namespace

std::string schedule_name_str(ScheduleName n) {
  switch (n) {
    case ScheduleName::kLinear: return "linear";
    case ScheduleName::kThreeStep: return "3step";
    case ScheduleName::kFinalCollapse: return "final_collapse";
    case ScheduleName::kCollapsedEnsemble: return "collapsed_ensemble";
    case ScheduleName::kConstant: return "constant";
  }
  return "?";
}

RunConfig config_from_json(const json& j) {
  Obj o(j, "");
  if (!o.has("schema_version")) throw ConfigError("schema_version is required (current: 1)");
  int version = 0;
  o.integer("schema_version", version);
  if (version != kSchemaVersion)
    throw ConfigError("unsupported schema_version " + std::to_string(version) + " (expected 1)");
  RunConfig c;
  read_model(o.sub("model"), c.model);
  read_data(o.sub("data"), c.data);
  read_cluster(o.sub("cluster"), c.cluster);
  read_schedule(o.sub("schedule"), c.schedule);
  Obj opt = o.sub("optimizer");
  opt.num("momentum", c.optimizer.momentum);
  opt.flag("decay_bn_affine", c.optimizer.decay_bn_affine);
  opt.done();
  read_augment(o.sub("augment"), c.augment);
  o.num("epochs", c.epochs);
  o.integer("seed", c.seed);
  o.flag("evaluate_epochs", c.evaluate_epochs);
  std::string out = c.output_dir.string();
  o.str("output_dir", out);
  c.output_dir = out;
  o.done();

  if (!(c.epochs > 0.0)) throw ConfigError("epochs must be positive");
  c.model.validate();
  c.cluster.validate();
  c.optimizer.validate();
  c.augment.validate();
  if (c.data.source == DataSource::kSynthetic) c.data.synthetic.validate();
  c.schedule.rule.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  return {{"schema_version", kSchemaVersion},
          {"model", write_model(c.model)},
          {"data", write_data(c.data)},
          {"cluster", write_cluster(c.cluster)},
          {"schedule", write_schedule(c.schedule)},
          {"optimizer", {{"momentum", c.optimizer.momentum}, {"decay_bn_affine", c.optimizer.decay_bn_affine}}},
          {"augment", write_augment(c.augment)},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"evaluate_epochs", c.evaluate_epochs},
          {"output_dir", c.output_dir.string()}};
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = config_from_json(j);
  if (c.data.source == DataSource::kIdx && c.data.idx_dir.is_relative())
    c.data.idx_dir = (path.parent_path() / c.data.idx_dir).lexically_normal();
  return c;
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << config_to_json(cfg).dump(2) << "\n";
  if (!f) throw Error("failed writing " + path.string());
}

data::Dataset load_dataset(const DataConfig& cfg) {
  if (cfg.source == DataSource::kSynthetic) return data::make_synthetic(cfg.synthetic);
  return data::load_idx_dataset(cfg.idx_dir, cfg.classes);
}

sched::ScheduleBundle resolve_schedule(const RunConfig& cfg, long ipe) {
  const auto& s = cfg.schedule;
  const long B = static_cast<long>(cfg.cluster.global_batch());
  auto plain = [&](sched::ScheduleSpec lr) {
    sched::ScheduleBundle b;
    const long n = lr.total_iters();
    b.wd = sched::constant(sched::Kind::kWeightDecay, s.weight_decay, n);
    b.lr = std::move(lr);
    b.augmentation_off_at = n;
    return b;
  };
  switch (s.name) {
    case ScheduleName::kLinear: return plain(sched::build_linear(s.rule, B, ipe, cfg.epochs));
    case ScheduleName::kThreeStep: return plain(sched::build_3step(s.rule, B, ipe, cfg.epochs));
    case ScheduleName::kConstant:
      return plain(sched::constant(sched::Kind::kLr, s.lr, sched::epoch_to_iter(cfg.epochs, ipe)));
    case ScheduleName::kFinalCollapse:
      return sched::build_final_collapse(sched::build_linear(s.rule, B, ipe, cfg.epochs), s.collapse_epochs, ipe,
                                         s.collapse);
    case ScheduleName::kCollapsedEnsemble:
      return sched::build_collapsed_ensemble(s.rule, B, ipe, cfg.epochs, s.ensemble);
  }
  throw ConfigError("unknown schedule");
}

dist::TrainConfig train_config(const RunConfig& cfg, const data::Dataset& ds) {
  dist::TrainConfig t;
  t.model = cfg.model;
  t.cluster = cfg.cluster;
  t.sgd = cfg.optimizer;
  t.augment = cfg.augment;
  t.seed = cfg.seed;
  t.evaluate_epochs = cfg.evaluate_epochs;
  const long ipe = data::iters_per_epoch(ds.n_train(), cfg.cluster.global_batch());
  t.schedule = resolve_schedule(cfg, ipe);
  dist::check_run(t, ds);
  return t;
}

}  // namespace ssgd::harness
