#pragma once

#include <stdexcept>
#include <string>

namespace can {

/// Base of every error the library raises. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad hyper-parameters, flags or shapes supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: corpus files, tag sequences, checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or failed numeric checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace can
