#pragma once

#include <stdexcept>
#include <string>

namespace dipa {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data: bad rasters, out-of-range config values, bad JSON.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Shape or size mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Patch placement that maps to an empty region.
class PlacementError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Optimizer produced a NaN/Inf loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dipa
