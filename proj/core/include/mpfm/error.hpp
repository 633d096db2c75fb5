// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpfm {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument violates a documented precondition (shape, range, finiteness).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Caller broke an API contract (e.g. backward on a non-scalar).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or infinity.
class NumericFault : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Time t = 0 where a strictly positive time is required.
class DegenerateTime : public Error {
 public:
  using Error::Error;
};

class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// Finite-difference check cannot be trusted (loss not deterministic).
class CheckInvalid : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatVersionError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace mpfm
