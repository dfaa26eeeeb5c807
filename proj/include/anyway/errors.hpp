#pragma once

#include <stdexcept>
#include <string>

namespace anyway {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a documented precondition (e.g. a target row that is not a distribution).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

/// API misuse, such as calling backward without a matching forward pass.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file. `offset` is the byte position where parsing stopped.
class LoadError : public Error {
 public:
  LoadError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace anyway
