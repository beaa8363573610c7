#pragma once

#include <stdexcept>
#include <string>

namespace wavecap {

// Root of every error the library raises. Subclasses map onto the CLI's
// exit-code classes (config / data / runtime).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

// Raised by training loops when the loss leaves the finite range. `snapshot`
// carries the per-component values at the failing step.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, std::string snapshot)
      : Error(what), snapshot_(std::move(snapshot)) {}
  const std::string& snapshot() const { return snapshot_; }

 private:
  std::string snapshot_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ConfigHashMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace wavecap
