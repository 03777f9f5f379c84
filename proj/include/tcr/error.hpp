#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tcr {

/// Machine-readable failure categories surfaced by every module and the CLI.
enum class ErrorCategory {
  EmptyLog,
  FormatError,
  RangeError,
  WindowError,
  CardinalityError,
  DataError,
  InsufficientHistory,
  ShapeError,
  FitError,
  DegenerateLabels,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::EmptyLog: return "EmptyLog";
    case ErrorCategory::FormatError: return "FormatError";
    case ErrorCategory::RangeError: return "RangeError";
    case ErrorCategory::WindowError: return "WindowError";
    case ErrorCategory::CardinalityError: return "CardinalityError";
    case ErrorCategory::DataError: return "DataError";
    case ErrorCategory::InsufficientHistory: return "InsufficientHistory";
    case ErrorCategory::ShapeError: return "ShapeError";
    case ErrorCategory::FitError: return "FitError";
    case ErrorCategory::DegenerateLabels: return "DegenerateLabels";
    case ErrorCategory::ConfigError: return "ConfigError";
    case ErrorCategory::IoError: return "IoError";
  }
  return "Unknown";
}

/// Process exit status for a category. 0 is reserved for success.
inline int exit_code(ErrorCategory c) { return 10 + static_cast<int>(c); }

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(std::string(to_string(category)) + ": " + message),
        category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& message) {
  throw Error(c, message);
}

}  // namespace tcr
