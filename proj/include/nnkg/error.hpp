#pragma once

#include <stdexcept>
#include <string>

namespace nnkg {

// Exit-code classes used by the CLI: config/usage -> 1, data -> 2, numeric -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Shape or arity violations between tensors/operators.
struct DimensionError : ConfigError {
  using ConfigError::ConfigError;
};

// Raised when a model family cannot realize an operator (mixer has no negation).
struct UnsupportedOperatorError : ConfigError {
  using ConfigError::ConfigError;
};

struct ParseError : DataError {
  using DataError::DataError;
};

}  // namespace nnkg
