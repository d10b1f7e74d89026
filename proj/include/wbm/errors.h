#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wbm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Container shapes or dimensions disagree.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A value is outside its documented domain (non-finite, out of range, ill-posed).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Geometry is too close to degenerate for the requested computation.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// A point lies on or behind the image plane.
class ProjectionError : public Error {
 public:
  using Error::Error;
};

/// Too few usable observations to determine a solution.
class UnderdeterminedError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss or gradient.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Invalid pipeline configuration; raised before any work is done.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Base class for interchange-file errors. Carries the 1-based line number
/// (0 when the error is not tied to a line).
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Malformed JSON.
class ParseError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Missing field, wrong type or wrong element count.
class SchemaError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Field present but its value violates a documented bound.
class RangeError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Field not part of the schema while parsing in strict mode.
class UnknownFieldError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace wbm
