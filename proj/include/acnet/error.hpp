#pragma once

#include <stdexcept>
#include <string>

namespace acnet {

/// Raised when an operator receives arguments that violate its shape or
/// range preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN/Inf where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by file readers on malformed or mismatched content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void reject(const std::string& where, const std::string& what) {
  throw InvalidInput(where + ": " + what);
}

inline void require(bool ok, const char* where, const std::string& what) {
  if (!ok) reject(where, what);
}

}  // namespace detail
}  // namespace acnet
