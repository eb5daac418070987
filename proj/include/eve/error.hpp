#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eve {

/// Error families. Each maps to a distinct process exit code in the CLI.
enum class ErrorCode {
  // grid
  CycleDetected,
  Disconnected,
  NonContiguousRegion,
  NoConvergence,
  VoltageCollapse,
  DimensionMismatch,
  UnknownRegion,
  // resources / market
  InvalidParams,
  Infeasible,
  SolverStall,
  MissingAggregator,
  NoPriorSolution,
  // verification
  SingularSystem,
  GraphDisconnected,
  InsufficientRegions,
  // adversary
  UnknownSensor,
  NotANeighbor,
  // ledger
  AccessDenied,
  ChannelMismatch,
  NotFound,
  WindowClosed,
  // orchestrator
  UnknownTemplate,
  IoFailure,
  ParseError,
};

std::string_view to_string(ErrorCode code);

/// Exit code family used by the CLI (0 is success).
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace eve
