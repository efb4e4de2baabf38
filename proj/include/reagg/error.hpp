#pragma once

#include <stdexcept>
#include <string>

namespace reagg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed files, inconsistent dimensions, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A numerical routine failed (non-convergence, singular system).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace reagg
