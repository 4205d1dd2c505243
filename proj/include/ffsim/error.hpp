#pragma once

#include <stdexcept>
#include <string>

namespace ffsim {

/// Error categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  InvalidInput,   // precondition violated by the caller
  Config,         // scenario / checkpoint / file content is invalid
  Numerical,      // integration diverged, solver stalled, non-finite values
  Verification,   // replay mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct InvalidInputError : Error {
  explicit InvalidInputError(const std::string& w) : Error(ErrorKind::InvalidInput, w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorKind::Numerical, w) {}
};

/// Optimizer failure (non-finite QP iterate). Controllers catch this and fall
/// back to PD.
struct SolverError : NumericalError {
  explicit SolverError(const std::string& w) : NumericalError(w) {}
};

struct VerificationError : Error {
  explicit VerificationError(const std::string& w) : Error(ErrorKind::Verification, w) {}
};

}  // namespace ffsim
