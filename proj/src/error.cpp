#include "error.hpp"

namespace alearn {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::Data: return "data";
    case ErrorCode::Io: return "io";
    case ErrorCode::Configuration: return "configuration";
    case ErrorCode::TrainingDiverged: return "training_diverged";
    case ErrorCode::InsufficientPool: return "insufficient_pool";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

}  // namespace alearn
