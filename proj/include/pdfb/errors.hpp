#pragma once

#include <stdexcept>
#include <string>

namespace pdfb {

/// Base class for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PDFB_DEFINE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  };

PDFB_DEFINE_ERROR(DimensionError)
PDFB_DEFINE_ERROR(IndexOutOfRange)
PDFB_DEFINE_ERROR(SelfLoop)
PDFB_DEFINE_ERROR(InvalidArgument)
PDFB_DEFINE_ERROR(UnknownKind)
PDFB_DEFINE_ERROR(UnsupportedPrimalProx)
PDFB_DEFINE_ERROR(BadLabels)
PDFB_DEFINE_ERROR(MissingPrimalEvaluator)
PDFB_DEFINE_ERROR(DegenerateProblem)
PDFB_DEFINE_ERROR(NonFiniteIterate)
PDFB_DEFINE_ERROR(MissingHistory)
PDFB_DEFINE_ERROR(UnsupportedMode)
PDFB_DEFINE_ERROR(TooManyWorkers)
PDFB_DEFINE_ERROR(InsufficientInactives)
PDFB_DEFINE_ERROR(InsufficientData)
PDFB_DEFINE_ERROR(FormatError)
PDFB_DEFINE_ERROR(ConfigError)
PDFB_DEFINE_ERROR(IoError)

#undef PDFB_DEFINE_ERROR

/// Power iteration did not reach the requested tolerance. The last estimate
/// is still a valid lower bound on the operator norm.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double estimate)
      : Error(what), estimate_(estimate) {}
  double estimate() const noexcept { return estimate_; }

 private:
  double estimate_;
};

/// A step-size schedule failed one of its sufficient conditions.
class ConstraintViolation : public Error {
 public:
  ConstraintViolation(const std::string& what, long k)
      : Error(what + " (k=" + std::to_string(k) + ")"), k_(k) {}
  long k() const noexcept { return k_; }

 private:
  long k_;
};

/// Reference solve finished but the fixed-point residual stayed above the
/// acceptance threshold.
class ResidualTooLarge : public Error {
 public:
  ResidualTooLarge(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace pdfb
