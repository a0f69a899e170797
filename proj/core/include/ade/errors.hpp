#pragma once

#include <stdexcept>
#include <string>

namespace ade {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flags, bad config values, unknown modes.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed files, invariant violations in datasets and stores.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses, degenerate normalizations, infeasible LPs.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ade
