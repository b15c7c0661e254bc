#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace keyflow {

enum class ErrorCode {
  kDegenerateRotation,
  kParameterOutOfRange,
  kBadLength,
  kShapeMismatch,
  kConfigInvalid,
  kIoError,
  kFormatError,
  kSchemaError,
  kLengthMismatch,
  kNotNormalized,
  kInfeasibleTarget,
  kEmptyCorpus,
  kEmptyBatch,
  kTooShort,
  kAnchorMissing,
  kStepsInvalid,
  kEmpty,
  kDegenerateConfiguration,
  kNoAnchors,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace keyflow
