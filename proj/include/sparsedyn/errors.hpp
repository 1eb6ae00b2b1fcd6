#pragma once

#include <stdexcept>
#include <string>

namespace sparsedyn {

enum class ErrorCategory {
  configuration,
  argument,
  size,
  integration,
  linear_algebra,
  solver,
  no_corner,
  coverage,
  evaluation,
  rank,
  io,
};

const char* category_name(ErrorCategory c);

/// Base exception for every recoverable failure raised by the library.
/// The category is stable and suitable for machine consumption.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

/// Raised when numerical time integration produces a non-finite or
/// runaway state.  The failure time is kept for reporting.
class IntegrationError : public Error {
 public:
  IntegrationError(double t, const std::string& what)
      : Error(ErrorCategory::integration, what), time_(t) {}
  double time() const { return time_; }

 private:
  double time_;
};

}  // namespace sparsedyn
