#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace attnflow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A model parameter violates its structural invariant (e.g. a non-SPD theta).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Base for failures caused by floating-point breakdown.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A matrix would have been built with a NaN or Inf entry.
class NonFiniteError : public NumericalError {
 public:
  NonFiniteError(std::size_t row, std::size_t col)
      : NumericalError("non-finite matrix entry at (" + std::to_string(row) + "," +
                       std::to_string(col) + ")"),
        row_(row),
        col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

/// Finite-difference probing produced a non-finite loss.
class OracleError : public NumericalError {
 public:
  OracleError(std::size_t row, std::size_t col, const std::string& what)
      : NumericalError(what), row_(row), col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

/// Configuration or input data failed validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace attnflow
