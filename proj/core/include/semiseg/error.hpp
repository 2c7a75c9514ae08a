#pragma once

#include <stdexcept>
#include <string>

namespace semiseg {

/// Invalid configuration or manifest parameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates an operation's contract (range, shape, normalization).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or an I/O step failed at runtime.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace semiseg
