#pragma once

#include <stdexcept>
#include <string>

namespace privleak {

/// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape-chain or extent mismatch between tensors, layers or parameter sets.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed by a numeric kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk input: dataset files, checkpoints, reports.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Report or checkpoint written by an incompatible schema version.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace privleak
