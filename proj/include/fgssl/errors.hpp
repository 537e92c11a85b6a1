#pragma once

#include <stdexcept>
#include <string>

namespace fgssl {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or parameter layouts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed, or a value outside a function's domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data or a graph that violates its invariants.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fgssl
