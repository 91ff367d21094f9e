#pragma once

#include <stdexcept>
#include <string>

namespace ngpt {

/// Invalid shapes, out-of-range ids, bad config values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A quantity that must be nonzero (a norm, a factor RMS) vanished.
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN or Inf produced by a computation.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-level failures: unreadable input, bad checkpoint header, unwritable output.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ngpt
