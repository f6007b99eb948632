#pragma once

#include <stdexcept>
#include <string>

namespace veto {

// Bad configs, bad files, shape mismatches. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor-op dimension error; the message names the offending shapes.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Non-finite losses, failed gradient checks. The CLI maps these to exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace veto
