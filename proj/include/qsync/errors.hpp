#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qsync {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: out-of-domain parameters, malformed states, wrong shapes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A computation that started from valid input but could not produce a
/// trustworthy number.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class StabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DefectiveGeneratorError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NoDominantModeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class UndefinedCorrelationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, double learning_rate)
      : NumericalError(what), epoch_(epoch), learning_rate_(learning_rate) {}
  std::size_t epoch() const noexcept { return epoch_; }
  double learning_rate() const noexcept { return learning_rate_; }

 private:
  std::size_t epoch_;
  double learning_rate_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `line()` is 1-based; 0 when not line-oriented.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : IoError(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace qsync
