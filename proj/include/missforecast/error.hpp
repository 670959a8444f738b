#pragma once

#include <stdexcept>
#include <string>

namespace missforecast {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed user input: files, values outside their domain.
class InputError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition (e.g. read a masked cell).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SingularDesignError : public NumericError {
 public:
  SingularDesignError(const std::string& column, const std::string& what)
      : NumericError(what), column_(column) {}
  const std::string& column() const { return column_; }

 private:
  std::string column_;
};

class SeparationError : public NumericError {
 public:
  using NumericError::NumericError;
};

class UnsupportedPatternError : public Error {
 public:
  using Error::Error;
};

// Raised when a procedure cannot be fitted on the data it was given.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace missforecast
