#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace psic {

// Exception hierarchy. The CLI maps each family to an exit code
// (config → 2, numeric → 3, I/O → 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class LoadErrorKind { kBadMagic, kBadVersion, kTruncated, kCrcMismatch, kMalformed };

class LoadError : public IoError {
 public:
  LoadError(LoadErrorKind kind, const std::string& what, std::size_t offset = 0)
      : IoError(what), kind_(kind), offset_(offset) {}

  LoadErrorKind kind() const { return kind_; }
  // Byte offset the error refers to (first corrupt byte for CRC failures).
  std::size_t offset() const { return offset_; }

 private:
  LoadErrorKind kind_;
  std::size_t offset_;
};

}  // namespace psic
