#pragma once

#include <stdexcept>
#include <string>

namespace tsmini {

// Malformed input files, bad magic bytes, truncated blobs, config/checkpoint
// mismatches.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A binary file written by a newer (or otherwise unknown) format revision.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Non-finite loss or activations during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid command-line arguments or run configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tsmini
