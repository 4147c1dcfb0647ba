#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ilb {

enum class ErrorKind {
  InvalidSpec,
  Validation,
  ReferentialIntegrity,
  InsufficientPopulation,
  Domain,
  Coverage,
  ContractViolation,
  DegeneratePopulation,
  UndefinedMetric,
  Infeasible,
  Shape,
  Numerical,
  IsolatedNode,
  DegenerateClustering,
  DegenerateSupervision,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and tests)
// can branch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}
inline void require(bool condition, ErrorKind kind, const char* message) {
  if (!condition) fail(kind, message);
}

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::ReferentialIntegrity: return "referential-integrity";
    case ErrorKind::InsufficientPopulation: return "insufficient-population";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Coverage: return "coverage";
    case ErrorKind::ContractViolation: return "contract-violation";
    case ErrorKind::DegeneratePopulation: return "degenerate-population";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::IsolatedNode: return "isolated-node";
    case ErrorKind::DegenerateClustering: return "degenerate-clustering";
    case ErrorKind::DegenerateSupervision: return "degenerate-supervision";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace ilb
