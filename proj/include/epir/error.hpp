#pragma once

#include <stdexcept>
#include <string>

namespace epir {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or rank disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination of values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input data (files, manifests, images).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/inf or degenerate numerical situation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace epir
