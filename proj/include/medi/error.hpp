#pragma once

#include <stdexcept>
#include <string>

namespace medi {

/// Base for every error raised by the library. The CLI maps subclasses onto
/// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration or violated precondition on user-supplied values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Data that fails a structural check (disjointness, id mismatch, bad file).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Dimension mismatch between a model and its inputs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Sampling request the available data cannot satisfy.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace medi
