#pragma once

#include <stdexcept>
#include <string>

namespace lqrlab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix or vector shapes do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A closed loop (or Lyapunov operator) is not contractive.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefiniteError : public Error {
 public:
  using Error::Error;
};

/// A plant description failed validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Riccati iteration did not converge.
class NotStabilizableError : public Error {
 public:
  using Error::Error;
};

/// Non-finite intermediate value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A simulated state or learned gain blew up.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace lqrlab
