#pragma once

#include <stdexcept>
#include <string>

namespace dost {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A sequence is shorter than an operation requires (e.g. a convolution's
/// receptive field).
class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data. Messages name the offending row/column.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingFileError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// NaN/Inf encountered where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the autodiff tape (non-scalar loss, double backward).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dost
