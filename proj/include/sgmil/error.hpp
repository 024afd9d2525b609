#pragma once

#include <stdexcept>
#include <string>

namespace sgmil {

enum class ErrorKind {
  InvalidInput,
  Format,
  EmptyBag,
  Config,
  Untrainable,
  Divergence,
  UndefinedMetric,
};

/// Exception carrying a category so the CLI can map failures to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Exit codes: 2 config, 3 data, 4 numeric failure, 5 undefined metric.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
      return 2;
    case ErrorKind::InvalidInput:
    case ErrorKind::Format:
    case ErrorKind::EmptyBag:
      return 3;
    case ErrorKind::Untrainable:
    case ErrorKind::Divergence:
      return 4;
    case ErrorKind::UndefinedMetric:
      return 5;
  }
  return 1;
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::Format: return "format error";
    case ErrorKind::EmptyBag: return "empty bag";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Untrainable: return "untrainable";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::UndefinedMetric: return "undefined metric";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace sgmil
