#include "subscale/error.hpp"

namespace subscale {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::NonPositiveValue: return "NonPositiveValue";
    case ErrorCode::NonMonotoneTokens: return "NonMonotoneTokens";
    case ErrorCode::WindowLargerThanRun: return "WindowLargerThanRun";
    case ErrorCode::TooFewRecords: return "TooFewRecords";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::TargetUnreachable: return "TargetUnreachable";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonPositiveActual: return "NonPositiveActual";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NoInteriorMinimum: return "NoInteriorMinimum";
    case ErrorCode::BinTooSmall: return "BinTooSmall";
    case ErrorCode::KnobMissing: return "KnobMissing";
    case ErrorCode::NoRunReachesTarget: return "NoRunReachesTarget";
  }
  return "Unknown";
}

}  // namespace subscale
