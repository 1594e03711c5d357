// Exception hierarchy shared by every hyhdr module.
#pragma once

#include <stdexcept>
#include <string>

namespace hyhdr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared in an operand or a result.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (window size, crop size, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Value outside the mathematical domain of a mapping (e.g. exposure time <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Recognised container whose version this build cannot read.
class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// File missing or unreadable; the message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hyhdr
