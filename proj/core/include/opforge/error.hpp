#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace opforge {

/// Every error raised by the library carries a stable machine-readable code
/// next to the human message, so callers can branch without string matching.
enum class ErrorCode {
  kParseError,
  kDuplicateOperator,
  kDanglingReference,
  kCycleDetected,
  kUnknownOperator,
  kSyntaxError,
  kUnknownRule,
  kMissingDocstring,
  kPayloadKindMismatch,
  kNoCodeBlock,
  kMultipleModules,
  kTemplateError,
  kTransportError,
  kRateLimited,
  kBadResponse,
  kSaturation,
  kScriptExhausted,
  kFrameTooLarge,
  kMalformedFrame,
  kVersionMismatch,
  kPoolExhausted,
  kWorkerSpawnFailed,
  kWorkerLost,
  kCatalogMismatch,
  kInvalidArgument,
  kIoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Syntax errors keep the offending line for lint-stage reporting.
class SyntaxError : public Error {
 public:
  SyntaxError(int line, const std::string& message)
      : Error(ErrorCode::kSyntaxError, message), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace opforge
