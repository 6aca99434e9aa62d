#pragma once

#include <stdexcept>
#include <string>

namespace laybench {

// Base of every error the library throws. Callers that only need a message
// catch this; drivers that map errors to exit codes or HTTP statuses catch
// the concrete types.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input data (JSON syntax, wrong field types). Messages carry the
// 1-based line number when the input is line-oriented.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed data that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DuplicateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace laybench
