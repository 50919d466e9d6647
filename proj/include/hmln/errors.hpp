#pragma once

#include <stdexcept>
#include <string>

namespace hmln {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-range input: bad files, bad configuration, precondition
// failures caused by the caller's data.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A size or numerical guard refused to run (enumeration too large, solver
// problem too big, diverging weights).
class GuardError : public Error {
 public:
  using Error::Error;
};

// Internal contract broken, e.g. evaluating a feature on an unassigned atom.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace hmln
