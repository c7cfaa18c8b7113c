// SPDX-License-Identifier: Apache-2.0
#include "ssgd/nn/param_set.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ssgd/error.hpp"

namespace ssgd::nn {

Tensor& ParamSet::add(std::string name, ParamRole role, Tensor value) {
  if (index_.count(name)) throw ShapeError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), role, std::move(value)});
  return entries_.back().value;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

std::size_t ParamSet::total_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParamSet::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (is_trainable(e.role)) n += e.value.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, e.role, Tensor(e.value.shape(), 0.0f));
  return out;
}

std::vector<float> ParamSet::flatten_trainable() const {
  std::vector<float> flat;
  flat.reserve(trainable_scalars());
  for (const auto& e : entries_) {
    if (!is_trainable(e.role)) continue;
    auto v = e.value.values();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return flat;
}

void ParamSet::unflatten_trainable(std::span<const float> flat) {
  if (flat.size() != trainable_scalars()) {
    throw ShapeError("flat buffer has " + std::to_string(flat.size()) + " values, expected " +
                     std::to_string(trainable_scalars()));
  }
  std::size_t off = 0;
  for (auto& e : entries_) {
    if (!is_trainable(e.role)) continue;
    std::memcpy(e.value.data(), flat.data() + off, e.value.size() * sizeof(float));
    off += e.value.size();
  }
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("parameter file truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const ParamSet& params) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + params.total_scalars() * 4);
  put<std::uint32_t>(out, kParamMagic);
  put<std::uint32_t>(out, kParamVersion);
  put<std::uint64_t>(out, params.size());
  for (const auto& e : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.role));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto ext : e.value.shape()) put<std::uint64_t>(out, ext);
    for (float v : e.value.values()) put_f32(out, v);
  }
  return out;
}

ParamSet deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get<std::uint32_t>() != kParamMagic) throw FormatError("bad parameter file magic");
  auto version = r.get<std::uint32_t>();
  if (version != kParamVersion)
    throw FormatError("unsupported parameter file version " + std::to_string(version));
  auto count = r.get<std::uint64_t>();
  ParamSet ps;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.get_string(r.get<std::uint32_t>());
    auto role = r.get<std::uint8_t>();
    if (role > static_cast<std::uint8_t>(ParamRole::kBnStatistic))
      throw FormatError("entry '" + name + "' has unknown role " + std::to_string(role));
    auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& ext : shape) ext = r.get<std::uint64_t>();
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = r.get_f32();
    ps.add(std::move(name), static_cast<ParamRole>(role), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after parameter entries");
  return ps;
}

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  auto bytes = serialize(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

float max_abs_diff(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) throw ShapeError("parameter sets differ in entry count");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entry(i);
    const auto& eb = b.entry(i);
    if (ea.name != eb.name || ea.value.shape() != eb.value.shape())
      throw ShapeError("parameter layout mismatch at '" + ea.name + "'");
    for (std::size_t k = 0; k < ea.value.size(); ++k) m = std::max(m, std::fabs(ea.value[k] - eb.value[k]));
  }
  return m;
}

}  // namespace ssgd::nn
