#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace szlab {

/// Caller passed something the operation cannot accept (bad shape, range, id).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unknown configuration entry; the message names the line or key.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// A computation produced NaN/Inf or otherwise diverged.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMatrix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UndefinedRatio : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InsufficientSamples : public std::runtime_error {
 public:
  InsufficientSamples(const std::string& what, std::size_t count)
      : std::runtime_error(what + " (accepted " + std::to_string(count) + ")"), count_(count) {}
  std::size_t count() const noexcept { return count_; }

 private:
  std::size_t count_;
};

}  // namespace szlab
