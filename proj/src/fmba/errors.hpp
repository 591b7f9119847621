#pragma once

#include <stdexcept>
#include <string>

namespace fmba {

enum class ErrorCode {
  kInvalidArgument = 1,
  kBehindCamera,
  kTooManyLevels,
  kDimensionMismatch,
  kIndexOutOfRange,
  kSingularSystem,
  kTapeMissing,
  kDivergedLoss,
  kEmptyMask,
  kLengthMismatch,
  kInfeasibleSpec,
  kIo,
};

const char* error_code_name(ErrorCode code);

/// Exception carrying one of the library error codes. The C API maps the
/// code one-to-one onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fmba
