// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ssgd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or buffer shape disagreement; the message names the offending layer
// or entry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid or unknown configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : Error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

// Peer disconnects, framing violations, aborted collectives.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized data (parameter files, IDX files, CSV tables).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssgd
