#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace grod {

enum class ErrorKind {
  NotPositiveDefinite,
  DimensionMismatch,
  ShapeMismatch,
  TooFewSamples,
  DegenerateScatter,
  DegenerateFeatures,
  EmptyInput,
  EmptyClass,
  LengthMismatch,
  UninitializedState,
  AllFiltered,
  IoError,
  FormatError,
  ConfigError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::DegenerateScatter: return "DegenerateScatter";
    case ErrorKind::DegenerateFeatures: return "DegenerateFeatures";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::UninitializedState: return "UninitializedState";
    case ErrorKind::AllFiltered: return "AllFiltered";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace grod
