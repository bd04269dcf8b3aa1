#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evifuse {

/// Machine-readable failure categories. The CLI prints them as a
/// `EVIFUSE-<code>:` prefix on a single error line.
enum class ErrorCode {
  InvalidArgument,
  FrameMismatch,
  DimensionMismatch,
  TotalConflict,
  ImpossibleCondition,
  ZeroDenominator,
  EmptyRegion,
  NonFinite,
  Format,
  Truncated,
  Version,
  Io,
  Config,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::FrameMismatch: return "FRAME_MISMATCH";
    case ErrorCode::DimensionMismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::TotalConflict: return "TOTAL_CONFLICT";
    case ErrorCode::ImpossibleCondition: return "IMPOSSIBLE_CONDITION";
    case ErrorCode::ZeroDenominator: return "ZERO_DENOMINATOR";
    case ErrorCode::EmptyRegion: return "EMPTY_REGION";
    case ErrorCode::NonFinite: return "NON_FINITE";
    case ErrorCode::Format: return "FORMAT";
    case ErrorCode::Truncated: return "TRUNCATED";
    case ErrorCode::Version: return "VERSION";
    case ErrorCode::Io: return "IO";
    case ErrorCode::Config: return "CONFIG";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace evifuse
