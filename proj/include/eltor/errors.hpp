#pragma once

#include <stdexcept>
#include <string>

namespace eltor {

enum class ErrorKind {
  Parse,
  Invariant,
  Dimension,
  Melnikov,
  SmallDivisor,
  TwistSingular,
  PeriodRefused,
  ContractionRefused,
  ClosureUnmet,
  Internal,
};

// Every failure that the pipeline can recover from or report is an Error with a kind;
// the CLI maps kinds to process exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Invariant: return "invariant";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Melnikov: return "melnikov";
    case ErrorKind::SmallDivisor: return "small_divisor";
    case ErrorKind::TwistSingular: return "twist_singular";
    case ErrorKind::PeriodRefused: return "period_refused";
    case ErrorKind::ContractionRefused: return "contraction_refused";
    case ErrorKind::ClosureUnmet: return "closure_unmet";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parse:
    case ErrorKind::Invariant:
    case ErrorKind::Dimension: return 2;
    case ErrorKind::Melnikov: return 3;
    case ErrorKind::SmallDivisor: return 4;
    case ErrorKind::TwistSingular: return 5;
    case ErrorKind::PeriodRefused: return 6;
    case ErrorKind::ContractionRefused: return 7;
    case ErrorKind::ClosureUnmet: return 8;
    case ErrorKind::Internal: return 1;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind k, const std::string& what) { throw Error(k, what); }

}  // namespace eltor
