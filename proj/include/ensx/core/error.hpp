#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace ensx {

enum class ErrorCode {
  InvalidArgument,
  NotFound,
  Io,
  Parse,
  Precondition,
  Corrupt,
  VersionMismatch,
  FingerprintMismatch,
  Unavailable,
  Conflict,
};

const char* to_string(ErrorCode code);

// Single exception type for the engine. The code drives HTTP status mapping
// and lets callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::optional<int> model_id = std::nullopt)
      : std::runtime_error(message), code_(code), model_id_(model_id) {}

  ErrorCode code() const noexcept { return code_; }
  // Set when the failure is attributable to one library model (corrupt files).
  std::optional<int> model_id() const noexcept { return model_id_; }

 private:
  ErrorCode code_;
  std::optional<int> model_id_;
};

}  // namespace ensx
