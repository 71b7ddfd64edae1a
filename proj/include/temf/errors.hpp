// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace temf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A label or token outside its declared vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line (or row) number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite values during training or gradient checking.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Bad run configuration (CLI flags, config files, paths).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace temf
