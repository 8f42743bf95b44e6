#pragma once

#include <stdexcept>
#include <string>

namespace stsam {

/// Bad user input: malformed files, inconsistent configuration, impossible
/// splits.  Maps to CLI exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric failure during optimization (non-finite loss or gradients).
/// Maps to CLI exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Command invoked without the inputs it needs.  Maps to CLI exit code 1.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stsam
