#pragma once

#include <stdexcept>
#include <string>

namespace sf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or shape mismatch.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Invalid user input (empty series, bad parameters, missing targets).
class InputError : public Error {
public:
  using Error::Error;
};

/// NaN or Inf detected where finite values are required.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Token count exceeds the model's maximum context.
class ContextLengthError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

class IoError : public Error {
public:
  using Error::Error;
};

class ChecksumError : public IoError {
public:
  using IoError::IoError;
};

class CheckpointError : public IoError {
public:
  using IoError::IoError;
};

class SamplerError : public Error {
public:
  using Error::Error;
};

/// Violated precondition on a caller-supplied function (e.g. a
/// non-deterministic loss handed to the finite-difference oracle).
class ContractViolation : public Error {
public:
  using Error::Error;
};

} // namespace sf
