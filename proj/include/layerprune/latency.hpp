#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "layerprune/model_graph.hpp"
#include "layerprune/tensor.hpp"

namespace layerprune {

inline constexpr int kDefaultWarmup = 10;
inline constexpr int kDefaultIters = 1000;

struct LatencyReport {
  std::string device_label = "cpu";
  int batch_size = 1;
  std::array<int, 3> input_shape{3, 32, 32};
  int warmup_iters = kDefaultWarmup;
  int timed_iters = kDefaultIters;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> samples;  // empty unless requested
};

struct LatencyReduction {
  LatencyReport baseline;
  LatencyReport pruned;
  double lr_percent = 0.0;
};

struct MeasureOptions {
  int warmup = kDefaultWarmup;
  int iters = kDefaultIters;
  std::string device = "cpu";
  std::uint64_t seed = 0;
  bool keep_samples = false;
};

// One forward pass on a prepared input.
using Runnable = std::function<void(const Tensor&)>;

// Only "cpu" is available; anything else throws DeviceUnavailable.
void require_device(const std::string& device);
// Device from LAYERPRUNE_DEVICE, else fallback.
std::string resolve_device(const std::string& fallback = "cpu");
std::string device_fingerprint();

// warmup untimed passes, then iters timed passes on one fixed random input.
// Throws MeasurementBusy when another measurement is running in the process
// and OutOfMemory if allocation fails.
LatencyReport measure(const Runnable& model, int batch_size, std::array<int, 3> input_shape,
                      const MeasureOptions& options = {});
LatencyReport measure(const ModelGraph& model, int batch_size, const MeasureOptions& options = {});

double lr_percent(double baseline_ms, double pruned_ms);
// Throws ProtocolMismatch on differing batch size, input shape or device.
LatencyReduction latency_reduction(const LatencyReport& baseline, const LatencyReport& pruned);

nlohmann::json to_json(const LatencyReport& r);
LatencyReport latency_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LatencyReduction& r);

}  // namespace layerprune
