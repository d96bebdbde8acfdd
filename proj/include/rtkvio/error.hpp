#pragma once

#include <stdexcept>
#include <string>

namespace rtkvio {

// Error categories. The CLI maps each category to its own exit code.
enum class ErrorCode {
  kInvalidInput = 1,
  kParse,
  kOrdering,
  kEpochMismatch,
  kNoCommonSatellite,
  kSingularity,
  kDecomposition,
  kSearchOverflow,
  kInterpolationGap,
  kExcitation,
  kNoConvergence,
  kInitialization,
  kEmptyEvaluation,
  kIo,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rtkvio
