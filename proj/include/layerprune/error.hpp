#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace layerprune {

enum class ErrorCode {
  config,
  unsupported_architecture,
  shape_mismatch,
  invalid_plan,
  empty_model,
  floor_violation,
  dependency_violation,
  criterion_inapplicable,
  mismatched_units,
  no_gradients,
  empty_class,
  budget_too_large,
  exhausted,
  divergence,
  protocol_mismatch,
  device_unavailable,
  out_of_memory,
  measurement_busy,
  no_results,
  io,
};

std::string_view error_name(ErrorCode code);

// Process exit code for a given error class: 2 config, 3 model/shape,
// 4 device, 5 no results.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace layerprune
