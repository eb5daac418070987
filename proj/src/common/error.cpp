#include "eve/error.hpp"

namespace eve {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::Disconnected: return "Disconnected";
    case ErrorCode::NonContiguousRegion: return "NonContiguousRegion";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::VoltageCollapse: return "VoltageCollapse";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnknownRegion: return "UnknownRegion";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::SolverStall: return "SolverStall";
    case ErrorCode::MissingAggregator: return "MissingAggregator";
    case ErrorCode::NoPriorSolution: return "NoPriorSolution";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::GraphDisconnected: return "GraphDisconnected";
    case ErrorCode::InsufficientRegions: return "InsufficientRegions";
    case ErrorCode::UnknownSensor: return "UnknownSensor";
    case ErrorCode::NotANeighbor: return "NotANeighbor";
    case ErrorCode::AccessDenied: return "AccessDenied";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::WindowClosed: return "WindowClosed";
    case ErrorCode::UnknownTemplate: return "UnknownTemplate";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleDetected:
    case ErrorCode::Disconnected:
    case ErrorCode::NonContiguousRegion:
    case ErrorCode::UnknownRegion:
      return 10;  // topology
    case ErrorCode::NoConvergence:
    case ErrorCode::VoltageCollapse:
      return 11;  // power flow
    case ErrorCode::DimensionMismatch:
    case ErrorCode::InvalidParams:
      return 12;  // model construction
    case ErrorCode::Infeasible:
    case ErrorCode::SolverStall:
    case ErrorCode::MissingAggregator:
    case ErrorCode::NoPriorSolution:
      return 20;  // market
    case ErrorCode::SingularSystem:
    case ErrorCode::GraphDisconnected:
    case ErrorCode::InsufficientRegions:
      return 30;  // verification
    case ErrorCode::UnknownSensor:
    case ErrorCode::NotANeighbor:
      return 40;  // adversary
    case ErrorCode::AccessDenied:
    case ErrorCode::ChannelMismatch:
    case ErrorCode::NotFound:
    case ErrorCode::WindowClosed:
      return 50;  // ledger
    case ErrorCode::UnknownTemplate:
    case ErrorCode::ParseError:
      return 60;  // scenario
    case ErrorCode::IoFailure:
      return 61;
  }
  return 1;
}

}  // namespace eve
