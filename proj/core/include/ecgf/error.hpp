#pragma once

#include <stdexcept>
#include <string>

namespace ecgf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration / arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: corrupt files, ragged records, unknown labels.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace ecgf
