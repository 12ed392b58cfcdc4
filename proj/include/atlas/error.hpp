#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace atlas {

enum class ErrorCode {
  kInvalidArgument,
  kNotFound,
  kCorruptData,
  kDimensionMismatch,
  kIo,
  kMissingPrerequisite,
  kEmbedderUnavailable,
  kEmbedderBadResponse,
  kPayloadTooLarge,
  kDiverged,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the whole engine. The code drives HTTP status
// mapping in the service and exit codes in the CLI.
class AtlasError : public std::runtime_error {
 public:
  AtlasError(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw AtlasError(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace atlas
