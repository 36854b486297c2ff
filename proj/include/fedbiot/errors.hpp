#pragma once

#include <stdexcept>
#include <string>

namespace fedbiot {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration (bad hyperparameters, impossible split, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Incompatible array shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed model input (token out of range, sequence too long).
class InputError : public Error {
 public:
  using Error::Error;
};

// A masked loss was asked to average over zero supervised positions.
class EmptySupervisionError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

// Checkpoint payload or header does not match what was written.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedbiot
