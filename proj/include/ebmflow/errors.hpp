#pragma once

#include <stdexcept>
#include <string>

namespace ebmflow {

// Caller passed inconsistent arguments (dimension mismatch, bad config, ...).
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A computation produced a non-finite value or otherwise broke down.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ebmflow
