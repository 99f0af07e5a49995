#pragma once

#include <stdexcept>
#include <string>

namespace nern {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  InvalidDistribution,
  DegenerateInput,
  IoError,
  Diverged,
  CalibrationFailed,
};

struct Error : std::runtime_error {
  ErrorCode code;
  Error(ErrorCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

[[noreturn]] inline void fail(ErrorCode c, const std::string& msg) { throw Error(c, msg); }

}  // namespace nern
