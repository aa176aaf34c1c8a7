#pragma once

#include <stdexcept>
#include <string>

namespace sparsenet {

// Raised when tensor extents do not fit an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or Inf produced by a forward or backward pass.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sparsenet
