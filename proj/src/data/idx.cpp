// SPDX-License-Identifier: Apache-2.0
#include "ssgd/data/idx.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "ssgd/error.hpp"

namespace ssgd::data {

namespace {

std::size_t type_size(IdxType t) {
  switch (t) {
    case IdxType::kU8:
    case IdxType::kI8:
      return 1;
    case IdxType::kI16:
      return 2;
    case IdxType::kI32:
    case IdxType::kF32:
      return 4;
    case IdxType::kF64:
      return 8;
  }
  throw FormatError("idx: unknown element type");
}

IdxType checked_type(std::uint8_t code) {
  switch (code) {
    case 0x08:
    case 0x09:
    case 0x0B:
    case 0x0C:
    case 0x0D:
    case 0x0E:
      return static_cast<IdxType>(code);
    default:
      throw FormatError("idx: unknown element type 0x" + std::to_string(code));
  }
}

std::uint64_t read_be(const std::uint8_t* p, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v = (v << 8) | p[i];
  return v;
}

void write_be(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t n) {
  for (std::size_t i = n; i-- > 0;) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

double decode(IdxType t, const std::uint8_t* p) {
  const std::uint64_t raw = read_be(p, type_size(t));
  switch (t) {
    case IdxType::kU8:
      return static_cast<double>(raw);
    case IdxType::kI8:
      return static_cast<double>(static_cast<std::int8_t>(raw));
    case IdxType::kI16:
      return static_cast<double>(static_cast<std::int16_t>(raw));
    case IdxType::kI32:
      return static_cast<double>(static_cast<std::int32_t>(raw));
    case IdxType::kF32:
      return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(raw)));
    case IdxType::kF64:
      return std::bit_cast<double>(raw);
  }
  return 0.0;
}

template <typename I>
std::uint64_t integral(double v, const char* tname) {
  if (!(v == std::floor(v)) || v < static_cast<double>(std::numeric_limits<I>::min()) ||
      v > static_cast<double>(std::numeric_limits<I>::max()))
    throw FormatError(std::string("idx: value does not fit ") + tname);
  return static_cast<std::uint64_t>(static_cast<I>(v));
}

}  // namespace

std::size_t IdxArray::count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("idx: truncated header");
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("idx: bad magic");
  IdxArray a;
  a.type = checked_type(bytes[2]);
  const std::size_t rank = bytes[3];
  if (rank == 0) throw FormatError("idx: rank 0");
  if (bytes.size() < 4 + 4 * rank) throw FormatError("idx: truncated dimensions");
  for (std::size_t i = 0; i < rank; ++i)
    a.dims.push_back(static_cast<std::uint32_t>(read_be(bytes.data() + 4 + 4 * i, 4)));
  const std::size_t n = a.count();
  const std::size_t es = type_size(a.type);
  const std::size_t off = 4 + 4 * rank;
  if (bytes.size() != off + n * es)
    throw FormatError("idx: payload is " + std::to_string(bytes.size() - off) + " bytes, expected " +
                      std::to_string(n * es));
  a.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.values[i] = decode(a.type, bytes.data() + off + i * es);
  return a;
}

std::vector<std::uint8_t> encode_idx(const IdxArray& a) {
  if (a.dims.empty() || a.dims.size() > 255) throw FormatError("idx: rank must be in [1, 255]");
  if (a.values.size() != a.count()) throw FormatError("idx: value count does not match dimensions");
  std::vector<std::uint8_t> out = {0, 0, static_cast<std::uint8_t>(a.type),
                                   static_cast<std::uint8_t>(a.dims.size())};
  for (auto d : a.dims) write_be(out, d, 4);
  const std::size_t es = type_size(a.type);
  out.reserve(out.size() + a.values.size() * es);
  for (double v : a.values) {
    std::uint64_t raw = 0;
    switch (a.type) {
      case IdxType::kU8:
        raw = integral<std::uint8_t>(v, "u8");
        break;
      case IdxType::kI8:
        raw = integral<std::int8_t>(v, "i8");
        break;
      case IdxType::kI16:
        raw = integral<std::int16_t>(v, "i16");
        break;
      case IdxType::kI32:
        raw = integral<std::int32_t>(v, "i32");
        break;
      case IdxType::kF32:
        raw = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        break;
      case IdxType::kF64:
        raw = std::bit_cast<std::uint64_t>(v);
        break;
    }
    write_be(out, raw, es);
  }
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("idx: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  auto bytes = encode_idx(array);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("idx: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("idx: write failed for " + path.string());
}

}  // namespace ssgd::data
