#pragma once

#include <stdexcept>
#include <string>

namespace pvf {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (CSV rows, timestamps, config values).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but violates a structural invariant
// (duplicate or non-uniform timestamps, bad file header, ...).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Values out of their admissible domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong lifecycle state (e.g. backward without forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during computation, or an unsolvable numeric system.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pvf
