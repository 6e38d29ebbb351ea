#pragma once

#include <stdexcept>
#include <string>

namespace seqvad {

enum class ErrorKind {
  parse,
  dimension_mismatch,
  validation,
  insufficient_data,
  io,
  numeric,
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parse: return "parse error";
    case ErrorKind::dimension_mismatch: return "dimension mismatch";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::insufficient_data: return "insufficient data";
    case ErrorKind::io: return "i/o error";
    case ErrorKind::numeric: return "numeric failure";
  }
  return "error";
}

/// Single exception type for the library; `kind()` tells callers how to react
/// (the CLI maps it onto an exit code).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace seqvad
