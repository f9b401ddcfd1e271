#pragma once

#include <stdexcept>
#include <string>

namespace alearn {

enum class ErrorCode {
  InvalidArgument,
  Validation,
  NotFound,
  Conflict,
  Data,
  Io,
  Configuration,
  TrainingDiverged,
  InsufficientPool,
  Internal,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure raised by the core carries one of the codes above; the C API
// maps them onto alearn_status values one-to-one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(int epoch, const std::string& message)
      : Error(ErrorCode::TrainingDiverged, message), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace alearn
