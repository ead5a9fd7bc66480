#pragma once

#include <stdexcept>
#include <string>

namespace ionsim {

/// Base class for all errors raised by the simulator.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Process exit code the CLI uses for this class of error.
  virtual int exit_code() const noexcept { return 1; }
};

/// Malformed input: bad configuration value, out-of-range index, size cap.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Physically invalid configuration (zigzag instability, resonant detuning,
/// unreachable coupling range).
class PhysicsError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// A numerical routine failed to reach its tolerance.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace ionsim
