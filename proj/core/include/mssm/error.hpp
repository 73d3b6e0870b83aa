#pragma once

#include <stdexcept>
#include <string>

namespace mssm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration file or struct failed validation. `field` names the
/// offending key using dotted notation (e.g. "train.steps").
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Quadratic-memory diagnostics refuse sequences longer than their cap.
class CapExceeded : public Error {
 public:
  CapExceeded(std::size_t length, std::size_t cap)
      : Error("sequence length " + std::to_string(length) +
              " exceeds the matrix-form cap of " + std::to_string(cap)),
        cap_(cap) {}

  std::size_t cap() const noexcept { return cap_; }

 private:
  std::size_t cap_;
};

}  // namespace mssm
