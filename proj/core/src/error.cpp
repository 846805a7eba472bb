#include "opforge/error.hpp"

namespace opforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateOperator: return "DuplicateOperator";
    case ErrorCode::kDanglingReference: return "DanglingReference";
    case ErrorCode::kCycleDetected: return "CycleDetected";
    case ErrorCode::kUnknownOperator: return "UnknownOperator";
    case ErrorCode::kSyntaxError: return "SyntaxError";
    case ErrorCode::kUnknownRule: return "UnknownRule";
    case ErrorCode::kMissingDocstring: return "MissingDocstring";
    case ErrorCode::kPayloadKindMismatch: return "PayloadKindMismatch";
    case ErrorCode::kNoCodeBlock: return "NoCodeBlock";
    case ErrorCode::kMultipleModules: return "MultipleModules";
    case ErrorCode::kTemplateError: return "TemplateError";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kBadResponse: return "BadResponse";
    case ErrorCode::kSaturation: return "SaturationSignal";
    case ErrorCode::kScriptExhausted: return "ScriptExhausted";
    case ErrorCode::kFrameTooLarge: return "FrameTooLarge";
    case ErrorCode::kMalformedFrame: return "MalformedFrame";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kPoolExhausted: return "PoolExhausted";
    case ErrorCode::kWorkerSpawnFailed: return "WorkerSpawnFailed";
    case ErrorCode::kWorkerLost: return "WorkerLost";
    case ErrorCode::kCatalogMismatch: return "CatalogMismatch";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace opforge
