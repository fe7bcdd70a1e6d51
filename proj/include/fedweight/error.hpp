#pragma once

#include <stdexcept>
#include <string>

namespace fedweight {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class TrainingOverflow : public Error {
 public:
  TrainingOverflow() : Error("numerical overflow in training") {}
};

}  // namespace fedweight
