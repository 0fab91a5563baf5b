#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iclb {

enum class ErrorCode {
  balance,
  unsupported_class_count,
  param,
  size,
  label,
  ambiguous_labels,
  prompt_parse,
  no_label_signal,
  backend_unavailable,
  unparseable_generation,
  protocol,
  probe_degraded,
  domain,
  degenerate_data,
  divergence,
  config,
  numerical,
  grid_mismatch,
  no_uncertainty_signal,
  empty_ledger,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::balance: return "BalanceError";
    case ErrorCode::unsupported_class_count: return "UnsupportedClassCount";
    case ErrorCode::param: return "ParamError";
    case ErrorCode::size: return "SizeError";
    case ErrorCode::label: return "LabelError";
    case ErrorCode::ambiguous_labels: return "AmbiguousLabels";
    case ErrorCode::prompt_parse: return "PromptParseError";
    case ErrorCode::no_label_signal: return "NoLabelSignal";
    case ErrorCode::backend_unavailable: return "BackendUnavailable";
    case ErrorCode::unparseable_generation: return "UnparseableGeneration";
    case ErrorCode::protocol: return "ProtocolError";
    case ErrorCode::probe_degraded: return "ProbeDegraded";
    case ErrorCode::domain: return "DomainError";
    case ErrorCode::degenerate_data: return "DegenerateData";
    case ErrorCode::divergence: return "DivergenceError";
    case ErrorCode::config: return "ConfigError";
    case ErrorCode::numerical: return "NumericalError";
    case ErrorCode::grid_mismatch: return "GridMismatch";
    case ErrorCode::no_uncertainty_signal: return "NoUncertaintySignal";
    case ErrorCode::empty_ledger: return "EmptyLedger";
    case ErrorCode::io: return "IoError";
  }
  return "Unknown";
}

/// Every failure the library raises carries one of the codes above so callers
/// (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix, for re-wrapping.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace iclb
