#include "ensx/core/error.hpp"

namespace ensx {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Precondition: return "precondition";
    case ErrorCode::Corrupt: return "corrupt";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::FingerprintMismatch: return "fingerprint_mismatch";
    case ErrorCode::Unavailable: return "unavailable";
    case ErrorCode::Conflict: return "conflict";
  }
  return "unknown";
}

}  // namespace ensx
