#pragma once

#include <stdexcept>
#include <string>

namespace collapse_lab {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, inconsistent labels, violated preconditions.
/// The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Divergence, non-convergence or an infeasible optimization problem.
/// The CLI maps this to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised by the hard-margin SVM when the data is not linearly separable.
class InfeasibleError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace collapse_lab
