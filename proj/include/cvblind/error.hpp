#pragma once

#include <stdexcept>
#include <string>

namespace cvblind {

enum class ErrorKind {
  invalid_argument,
  invalid_constellation,
  truncation,
  ill_conditioned_state,
  unphysical_state,
  no_positive_rate,
  invalid_limits,
  invalid_mode,
  trace_too_short,
  resolution,
  calibration_failure,
  degenerate_input,
  empty_input,
  io,
  config,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::invalid_constellation: return "invalid-constellation";
    case ErrorKind::truncation: return "truncation";
    case ErrorKind::ill_conditioned_state: return "ill-conditioned-state";
    case ErrorKind::unphysical_state: return "unphysical-state";
    case ErrorKind::no_positive_rate: return "no-positive-rate";
    case ErrorKind::invalid_limits: return "invalid-limits";
    case ErrorKind::invalid_mode: return "invalid-mode";
    case ErrorKind::trace_too_short: return "trace-too-short";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::calibration_failure: return "calibration-failure";
    case ErrorKind::degenerate_input: return "degenerate-input";
    case ErrorKind::empty_input: return "empty-input";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace cvblind
