#include "keyflow/error.hpp"

namespace keyflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateRotation: return "DegenerateRotation";
    case ErrorCode::kParameterOutOfRange: return "ParameterOutOfRange";
    case ErrorCode::kBadLength: return "BadLength";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNotNormalized: return "NotNormalized";
    case ErrorCode::kInfeasibleTarget: return "InfeasibleTarget";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kAnchorMissing: return "AnchorMissing";
    case ErrorCode::kStepsInvalid: return "StepsInvalid";
    case ErrorCode::kEmpty: return "Empty";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kNoAnchors: return "NoAnchors";
  }
  return "Unknown";
}

}  // namespace keyflow
