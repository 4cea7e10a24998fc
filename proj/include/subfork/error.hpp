#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace subfork {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated file contents.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Values that violate a documented invariant.
class ValidationError : public Error {
public:
  using Error::Error;
};

class BoundsError : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

/// Inconsistent network or solver configuration.
class SpecError : public Error {
public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
public:
  using Error::Error;
};

class PlacementError : public Error {
public:
  using Error::Error;
};

class SingularSystemError : public Error {
public:
  using Error::Error;
};

class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : Error(what), residual_history(std::move(history)) {}

  std::vector<double> residual_history;
};

}  // namespace subfork
