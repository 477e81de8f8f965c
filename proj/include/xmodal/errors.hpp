#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xmodal {

// Shapes of operands do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Vector with (near) zero norm where a direction is required.
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Loss or gradient became NaN/Inf during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Base for all file format problems (datasets, checkpoints, config files).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input at a specific line.
class ParseError : public FormatError {
 public:
  ParseError(std::size_t line, const std::string& message)
      : FormatError("line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Input parsed fine but violates a semantic invariant (shape, alignment, version).
class ValidationError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Bad configuration entry; key() names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace xmodal
