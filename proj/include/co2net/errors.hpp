#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace co2net {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree; `axis()` names the offending axis.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, int axis)
      : Error(what + " (axis " + std::to_string(axis) + ")"), axis_(axis) {}
  int axis() const { return axis_; }

 private:
  int axis_;
};

class EmptySequenceError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class DeterminismError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Binary decode failure at a byte offset into the stream.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace co2net
