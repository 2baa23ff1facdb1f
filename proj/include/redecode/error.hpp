#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace redecode {

/// Base of every exception thrown by the library. The C API maps the
/// concrete subclass onto a status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an op (e.g. log of x <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration value or key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Embedding file dimension does not match the configured embedding size.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss or other numerical failure during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace redecode
