#pragma once

#include <stdexcept>
#include <string>

namespace bifseg {

// Base of every error thrown by the library. The CLI maps the concrete
// category onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid operation parameters (even kernel, bad threshold, ...).
class SpecError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition (non-scalar loss, empty set, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or a gradient check that failed its bound.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed BSG1/BSCK container.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed container with unusable contents (non-binary mask, bad manifest row).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace bifseg
