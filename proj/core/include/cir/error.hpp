#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cir {

enum class ErrorCode {
  kInvalidArgument,
  kMissingFile,
  kIo,
  kParse,
  kChecksumMismatch,
  kCountMismatch,
  kNonFinite,
  kDuplicateId,
  kUnsupportedDtype,
  kUnknownId,
  kDegenerateInput,
  kDimensionMismatch,
  kInvariantViolation,
  kVersionMismatch,
  kTruncated,
  kMissingSection,
  kRemote,
};

std::string_view error_code_name(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (and the CLI) can branch on the kind of failure, not the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cir
