#pragma once

#include <stdexcept>
#include <string>

namespace aupipe {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed in arguments that violate an operation's contract
// (bad shapes, bad config values, indivisible sizes).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input data is malformed or violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf appeared where only finite values are legal.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Missing key in a store or registry.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace aupipe
