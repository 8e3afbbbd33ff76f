#include "layerprune/error.hpp"

namespace layerprune {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "ConfigError";
    case ErrorCode::unsupported_architecture: return "UnsupportedArchitecture";
    case ErrorCode::shape_mismatch: return "ShapeMismatch";
    case ErrorCode::invalid_plan: return "InvalidPlan";
    case ErrorCode::empty_model: return "EmptyModel";
    case ErrorCode::floor_violation: return "FloorViolation";
    case ErrorCode::dependency_violation: return "DependencyViolation";
    case ErrorCode::criterion_inapplicable: return "CriterionInapplicable";
    case ErrorCode::mismatched_units: return "MismatchedUnits";
    case ErrorCode::no_gradients: return "NoGradients";
    case ErrorCode::empty_class: return "EmptyClass";
    case ErrorCode::budget_too_large: return "BudgetTooLarge";
    case ErrorCode::exhausted: return "Exhausted";
    case ErrorCode::divergence: return "Divergence";
    case ErrorCode::protocol_mismatch: return "ProtocolMismatch";
    case ErrorCode::device_unavailable: return "DeviceUnavailable";
    case ErrorCode::out_of_memory: return "OutOfMemory";
    case ErrorCode::measurement_busy: return "MeasurementBusy";
    case ErrorCode::no_results: return "NoResults";
    case ErrorCode::io: return "IoError";
  }
  return "Unknown";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::protocol_mismatch:
    case ErrorCode::budget_too_large:
    case ErrorCode::io:
      return 2;
    case ErrorCode::device_unavailable:
    case ErrorCode::out_of_memory:
    case ErrorCode::measurement_busy:
      return 4;
    case ErrorCode::no_results:
      return 5;
    default:
      return 3;
  }
}

}  // namespace layerprune
