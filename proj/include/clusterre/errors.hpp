#pragma once

#include <stdexcept>
#include <string>

namespace clusterre {

// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed config, missing column, invalid option.
// The CLI maps this to exit code 1.
struct ConfigError : Error {
  using Error::Error;
};

// Numerical or feasibility failure: singular matrix, infeasible rates,
// rejection budget exhausted. The CLI maps this to exit code 2.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace clusterre
