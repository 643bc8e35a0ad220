// hpm/errors.hpp
//
// Exception hierarchy shared by every module. Callers that need to map
// failures onto exit codes catch by category (see runner.hpp).

#pragma once

#include <stdexcept>
#include <string>

namespace hpm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on the *kind* of input was violated (e.g. wrong space tag).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A numeric argument lies outside the operation's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Evaluation at a point where the map is undefined (xi = 0 for pi_P).
class SingularPointError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Malformed magic or header in a serialized field.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload size does not match the header.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// A computed quantity violates a structural invariant (negative mass...).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration; carries the 1-based line, 0 if unknown.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace hpm
