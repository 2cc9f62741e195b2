#pragma once

#include <stdexcept>
#include <string>

namespace genrobust {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a public result would contain NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Precondition violations on argument values (ranges, counts, labels).
class ValueError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or corrupted files.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace genrobust
