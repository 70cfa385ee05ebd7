#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace subscale {

enum class ErrorCode {
  InvalidArgument,
  Io,
  Format,
  MissingColumn,
  MissingField,
  NonPositiveValue,
  NonMonotoneTokens,
  WindowLargerThanRun,
  TooFewRecords,
  KTooLarge,
  DegenerateGeometry,
  TargetUnreachable,
  LengthMismatch,
  NonPositiveActual,
  InsufficientData,
  NoConvergence,
  EmptyInput,
  NoInteriorMinimum,
  BinTooSmall,
  KnobMissing,
  NoRunReachesTarget,
};

std::string_view error_code_name(ErrorCode code);

// Single exception type for the library; `code()` carries the failure class,
// `what()` a one-line diagnostic naming the offending row/run/bin.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace subscale
