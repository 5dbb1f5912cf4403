#pragma once

#include <stdexcept>
#include <string>

namespace idna {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions violate an operation's shape contract.
class InputShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse (bad arguments, empty datasets, mismatched masks).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant failed; indicates a wiring bug rather than bad input.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset directory is missing files or pairs.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint was produced by an incompatible model configuration or format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace idna
