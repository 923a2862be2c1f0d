#pragma once

#include <stdexcept>
#include <string>

namespace ergo {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or CLI usage (exit code 2 at the command layer).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ergo
