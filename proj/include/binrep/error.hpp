#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace binrep {

enum class ErrorCode : std::uint8_t {
  Dimension,
  Config,
  Input,
  State,
  Transform,
  Format,
  Io,
  Precondition,
  Training,
  Singularity,
  DegenerateLayer,
  Export,
};

const char* error_code_name(ErrorCode code) noexcept;

/// Base of every exception thrown by the library. The code lets the C API
/// translate exceptions into status values without RTTI games.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <ErrorCode C>
class CodedError : public Error {
 public:
  explicit CodedError(const std::string& message) : Error(C, message) {}
};

using DimensionError = CodedError<ErrorCode::Dimension>;
using ConfigError = CodedError<ErrorCode::Config>;
using InputError = CodedError<ErrorCode::Input>;
using StateError = CodedError<ErrorCode::State>;
using TransformError = CodedError<ErrorCode::Transform>;
using IoError = CodedError<ErrorCode::Io>;
using PreconditionError = CodedError<ErrorCode::Precondition>;
using TrainingError = CodedError<ErrorCode::Training>;
using SingularityError = CodedError<ErrorCode::Singularity>;
using DegenerateLayerError = CodedError<ErrorCode::DegenerateLayer>;
using ExportError = CodedError<ErrorCode::Export>;

/// Malformed file contents. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::uint64_t offset)
      : Error(ErrorCode::Format,
              message + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(message),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  /// Message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::uint64_t offset_;
};

}  // namespace binrep
