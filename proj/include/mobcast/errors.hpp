#pragma once

#include <stdexcept>
#include <string>

namespace mobcast {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

// On-disk bundle, checkpoint or report does not match the expected schema.
class FormatError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

// Feature window reaches before the first dataset day.
class WindowError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class EmptyTaskSetError : public Error {
 public:
  using Error::Error;
};

class UndefinedResultError : public Error {
 public:
  using Error::Error;
};

// Loss became non-finite during training.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

// A model read data beyond the last day it is allowed to observe.
class ProtocolViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace mobcast
