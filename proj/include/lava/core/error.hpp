// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lava {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced or consumed by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A row whose norm is too small to normalize.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff graph (non-scalar root, double backward, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated LTF / LAVC data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A modality was requested for a sample that does not carry it.
class AvailabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace lava
