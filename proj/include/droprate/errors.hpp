#pragma once

#include <stdexcept>
#include <string>

namespace droprate {

// Base of every error thrown by the library. The CLI maps the concrete type
// onto an exit code, so new subclasses must pick one of the three families.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// exit code 2
class ConfigError : public Error {
 public:
  using Error::Error;
};

// exit code 3
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class DegenerateDataError : public DataError {
 public:
  using DataError::DataError;
};

class ConditioningError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, long line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

// exit code 4
class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

class PreconditionError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace droprate
