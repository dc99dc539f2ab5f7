#pragma once

#include <stdexcept>
#include <string>

namespace fmenets {

// Bad run/case configuration: unknown keys, size mismatches, unknown case ids.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values, solver divergence, failed convergence.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fmenets
