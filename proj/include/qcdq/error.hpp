#pragma once

#include <stdexcept>
#include <string>

namespace qcdq {

/// Input that violates a documented precondition or schema (CLI exit code 2).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation that could not produce a finite, meaningful result (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qcdq
