#pragma once

#include <stdexcept>
#include <string>

namespace physctl {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Value outside an operation's domain (negative rate, phase outside [0,1], ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A caller violated an API contract (non-scalar loss, empty batch, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or text input. `offset` is the byte position when known.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what, long long offset = -1)
      : Error(offset >= 0 ? what + " (at byte " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  long long offset() const noexcept { return offset_; }

 private:
  long long offset_;
};

// Invalid run configuration; `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace physctl
