#pragma once

#include <stdexcept>
#include <string>

namespace contactsense {

// Base for all library errors. The CLI maps subclasses to exit codes:
// UsageError -> 1, DataError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments, bad config keys, violated call preconditions.
struct UsageError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data (files, recordings, caches).
struct DataError : Error {
  using Error::Error;
};

// Non-finite values, divergence, shape mismatches inside the math engine.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace contactsense
