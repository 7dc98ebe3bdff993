#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gcpx {

// Base of every error thrown by the library. Subclasses map onto the
// CLI exit codes (see tools/gcpx.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a function (x <= 0, NaN, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Dimension mismatch between vectors/matrices.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or option combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Requested more items than a container holds (k > N, num_base > n, ...).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Input data violates a contract (label outside roster, missing labels).
class DataError : public Error {
 public:
  using Error::Error;
};

// Geometric configuration for which a quantity is undefined.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or failure of an iterative method.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace gcpx
