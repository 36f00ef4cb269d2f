#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rfer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or dimensions that do not agree.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or undecodable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or gradients.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfer
