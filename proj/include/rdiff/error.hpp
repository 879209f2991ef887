#pragma once

#include <stdexcept>
#include <string>

namespace rdiff {

enum class ErrorCode {
  BaseMismatch,
  DimensionMismatch,
  InjectivityViolation,
  CutLocus,
  DomainTooLarge,
  ConnectivityFailure,
  AssumptionViolation,
  NoConvergence,
  MissingMetric,
  UnknownPreset,
  ConfigError,
  IoError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BaseMismatch: return "BaseMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InjectivityViolation: return "InjectivityViolation";
    case ErrorCode::CutLocus: return "CutLocus";
    case ErrorCode::DomainTooLarge: return "DomainTooLarge";
    case ErrorCode::ConnectivityFailure: return "ConnectivityFailure";
    case ErrorCode::AssumptionViolation: return "AssumptionViolation";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::MissingMetric: return "MissingMetric";
    case ErrorCode::UnknownPreset: return "UnknownPreset";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code, so
/// callers can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rdiff
