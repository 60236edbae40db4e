#pragma once

#include <stdexcept>
#include <string>

namespace crossrl {

/// Raised when the inputs to an operation are malformed (dimension
/// mismatches, invalid configuration values, unknown presets).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine fails to reach its tolerance or
/// receives data it cannot work with (indefinite Gram, NaN weights).
class SolverError : public std::runtime_error {
public:
  SolverError(const std::string& what, double residual = 0.0, long iterations = 0)
      : std::runtime_error(what), residual(residual), iterations(iterations) {}

  double residual;
  long iterations;
};

/// Raised on file read/write failures.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace crossrl
