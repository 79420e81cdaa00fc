#pragma once

#include <stdexcept>
#include <string>

namespace p2b {

/// Base class for all pipeline errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (bad schema, bad field, unreadable).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Structurally valid input violating a referential or value invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A box or proposal collapsed to zero width/height.
class DegenerateBoxError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling or placement budget exhausted.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace p2b
