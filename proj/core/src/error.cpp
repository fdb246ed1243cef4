#include "cir/error.hpp"

namespace cir {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kMissingFile: return "missing_file";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kChecksumMismatch: return "checksum_mismatch";
    case ErrorCode::kCountMismatch: return "count_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kDuplicateId: return "duplicate_id";
    case ErrorCode::kUnsupportedDtype: return "unsupported_dtype";
    case ErrorCode::kUnknownId: return "unknown_id";
    case ErrorCode::kDegenerateInput: return "degenerate_input";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kInvariantViolation: return "invariant_violation";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kMissingSection: return "missing_section";
    case ErrorCode::kRemote: return "remote";
  }
  return "unknown";
}

}  // namespace cir
