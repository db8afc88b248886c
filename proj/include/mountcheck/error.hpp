#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mountcheck {

enum class ErrorKind {
  InvalidArgument,
  EmptyInput,
  DoubleTransform,
  ShapeMismatch,
  Diverged,
  NoValidAngles,
  InconsistentLabels,
  EmptyScene,
  EmptyFrame,
  InfeasibleMix,
  Io,
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  SchemaViolation,
  LayoutMismatch,
  UnknownTensor,
  MissingFrame,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception. `kind()` lets callers branch on the failure class
/// without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mountcheck
