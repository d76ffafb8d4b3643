#pragma once

#include <stdexcept>
#include <string>

namespace crispr {

// Root of every error thrown by the library. Subclasses name the failure so
// callers (and tests) can dispatch on type rather than on message text.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint loading.
class LoadError : public Error {
 public:
  using Error::Error;
};
class CorruptHeaderError : public LoadError {
 public:
  using LoadError::LoadError;
};
class ShapeMismatchError : public LoadError {
 public:
  using LoadError::LoadError;
};
class NonFiniteValueError : public LoadError {
 public:
  using LoadError::LoadError;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// Prompt or target longer than max_seq_len.
class LengthError : public Error {
 public:
  using Error::Error;
};

// A forward/backward intermediate became inf or NaN; the message names the
// layer path where it was first seen.
class NumericError : public Error {
 public:
  using Error::Error;
};

class MissingHookError : public Error {
 public:
  using Error::Error;
};

// Two arrays (or maps) that must share a shape/coverage do not.
class CongruenceError : public Error {
 public:
  using Error::Error;
};

class MisuseError : public Error {
 public:
  using Error::Error;
};

class DegenerateClassSetError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class StaleMaskError : public Error {
 public:
  using Error::Error;
};

class AddressError : public Error {
 public:
  using Error::Error;
};

class UnsupportedCompactionError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};
class DuplicateNeuronError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class ScoreOrderError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MissingCorpusError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class PrecisionError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

// Wraps a failure inside a multi-stage run with the stage name prepended.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace crispr
