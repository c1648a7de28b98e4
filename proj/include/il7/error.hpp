#pragma once

#include <stdexcept>
#include <string>

namespace il7 {

/// Coarse failure category. The CLI maps these onto process exit codes.
enum class ErrorClass { Validation, Numerical, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

/// An argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorClass::Validation, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorClass::Validation, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorClass::Validation, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorClass::Io, what) {}
};

/// Base for failures of an iterative or numerical procedure.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorClass::Numerical, what) {}
};

class NoEquilibriumError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class StepUnderflowError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NegativeStateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularMatrixError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Wraps a failure from one patient of a cohort.
class PatientError : public Error {
 public:
  PatientError(const std::string& patient_id, const Error& cause)
      : Error(cause.error_class(), "patient " + patient_id + ": " + cause.what()), patient_id_(patient_id) {}
  const std::string& patient_id() const noexcept { return patient_id_; }

 private:
  std::string patient_id_;
};

int exit_code(ErrorClass cls) noexcept;

}  // namespace il7
