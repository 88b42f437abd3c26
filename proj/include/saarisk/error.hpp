#pragma once

#include <stdexcept>
#include <string>

namespace saarisk {

enum class ErrorCode {
  kInvalidArgument,
  kEmptySample,
  kObjectiveOverflow,
  kBracketUnavailable,
  kUnboundedSupport,
  kInvalidPlInstance,
  kHessianNotPositiveDefinite,
  kNonUniqueMinimizer,
  kC5Violated,
  kInsufficientRows,
  kConfig,
  kIo,
};

// All library failures are reported through this exception; code() lets
// callers (and the CLI exit-code mapping) branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace saarisk
