#pragma once

#include <stdexcept>
#include <string>

namespace brainenc {

// Exception hierarchy. The CLI maps each family to a process exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value was violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Data on disk or in memory violates a schema invariant (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class MissingFileError : public IoError {
 public:
  using IoError::IoError;
};

class CorruptContainerError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values during optimization (exit code 4).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace brainenc
