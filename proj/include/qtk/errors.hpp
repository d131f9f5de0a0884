#pragma once

#include <stdexcept>
#include <string>

namespace qtk {

// Shape disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable input file (manifest, tensor, step vector).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that is well formed but carries no usable signal: empty datasets,
// all-zero tensors, and similar.
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss probe produced NaN or infinity where a finite value is required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qtk
