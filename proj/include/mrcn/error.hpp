#pragma once

#include <stdexcept>
#include <string>

namespace mrcn {

// Base of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor dimensions or an operation's shape rule violated.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed raster/checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad configuration or architecture description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be used (missing files, no labeled pixels, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or an invalid numeric argument.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrcn
