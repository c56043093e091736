#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vortexlab {

enum class ErrorCode {
  NonFiniteInput,
  TargetTooCloseToSupport,
  NonzeroMeanVorticity,
  UnderResolvedBump,
  CFLViolation,
  BlowupGuard,
  TracersNotSeeded,
  SupportIntrudesProbeBall,
  FlowSeriesGap,
  RegionViolation,
  NonPositiveValue,
  ResolutionLoss,
  DesyncError,
  ConfigParseError,
  ColumnMissing,
  DegenerateFit,
  BackendUnavailable,
  InvalidArgument,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::TargetTooCloseToSupport: return "TargetTooCloseToSupport";
    case ErrorCode::NonzeroMeanVorticity: return "NonzeroMeanVorticity";
    case ErrorCode::UnderResolvedBump: return "UnderResolvedBump";
    case ErrorCode::CFLViolation: return "CFLViolation";
    case ErrorCode::BlowupGuard: return "BlowupGuard";
    case ErrorCode::TracersNotSeeded: return "TracersNotSeeded";
    case ErrorCode::SupportIntrudesProbeBall: return "SupportIntrudesProbeBall";
    case ErrorCode::FlowSeriesGap: return "FlowSeriesGap";
    case ErrorCode::RegionViolation: return "RegionViolation";
    case ErrorCode::NonPositiveValue: return "NonPositiveValue";
    case ErrorCode::ResolutionLoss: return "ResolutionLoss";
    case ErrorCode::DesyncError: return "DesyncError";
    case ErrorCode::ConfigParseError: return "ConfigParseError";
    case ErrorCode::ColumnMissing: return "ColumnMissing";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; the code tells callers which
/// contract was violated, the message carries the offending values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace vortexlab
