#pragma once

#include <stdexcept>
#include <string>

namespace resafe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The vehicle reached a state where the curvilinear frame is undefined.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// The numerical solver could not produce a usable iterate.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace resafe
