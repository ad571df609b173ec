#pragma once

#include <stdexcept>
#include <string>

namespace iassd {

// Error categories map one-to-one onto CLI exit codes (see tools/iassd.cpp).
// Precondition violations on library calls use std::invalid_argument.

/// Invalid or unreadable experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed, truncated or inconsistent input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced during numeric work (losses, gradients).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace iassd
