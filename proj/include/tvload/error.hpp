#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tvload {

enum class ErrorKind {
  InvalidGrid,
  Index,
  Shape,
  Numeric,
  Parameter,
  DegenerateSeries,
  RankDeficiency,
  Registry,
  Io,
  Parse,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidGrid: return "invalid_grid";
    case ErrorKind::Index: return "index";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::DegenerateSeries: return "degenerate_series";
    case ErrorKind::RankDeficiency: return "rank_deficiency";
    case ErrorKind::Registry: return "registry";
    case ErrorKind::Io: return "io";
    case ErrorKind::Parse: return "parse";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can emit a structured error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace tvload
