#include "layerprune/latency.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <new>
#include <random>
#include <thread>

#include "layerprune/error.hpp"
#include "layerprune/executor.hpp"

namespace layerprune {

void require_device(const std::string& device) {
  if (device != "cpu") throw Error(ErrorCode::device_unavailable, "device '" + device + "' is not available");
}

std::string resolve_device(const std::string& fallback) {
  const char* env = std::getenv("LAYERPRUNE_DEVICE");
  return env && *env ? std::string(env) : fallback;
}

std::string device_fingerprint() {
  std::string model = "unknown-cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return "cpu:" + model + " x" + std::to_string(std::thread::hardware_concurrency());
}

namespace {

std::atomic<bool> g_measuring{false};

class MeasurementToken {
 public:
  MeasurementToken() {
    if (g_measuring.exchange(true)) throw Error(ErrorCode::measurement_busy, "another measurement is running");
  }
  ~MeasurementToken() { g_measuring.store(false); }
  MeasurementToken(const MeasurementToken&) = delete;
  MeasurementToken& operator=(const MeasurementToken&) = delete;
};

// Host execution is synchronous.
void sync_device(const std::string&) {}

}  // namespace

LatencyReport measure(const Runnable& model, int batch_size, std::array<int, 3> input_shape,
                      const MeasureOptions& options) {
  require_device(options.device);
  if (batch_size < 1) throw Error(ErrorCode::config, "batch size must be >= 1");
  if (options.warmup < 0 || options.iters < 1) throw Error(ErrorCode::config, "need warmup >= 0 and iters >= 1");
  MeasurementToken token;

  LatencyReport r;
  r.device_label = options.device;
  r.batch_size = batch_size;
  r.input_shape = input_shape;
  r.warmup_iters = options.warmup;
  r.timed_iters = options.iters;
  r.seed = options.seed;

  using clock = std::chrono::steady_clock;
  std::vector<double> samples;
  try {
    std::mt19937_64 rng(options.seed);
    const Tensor input = gaussian_tensor({batch_size, input_shape[0], input_shape[1], input_shape[2]}, 1.0, rng);
    samples.reserve(options.iters);
    for (int i = 0; i < options.warmup; ++i) model(input);
    sync_device(options.device);
    for (int i = 0; i < options.iters; ++i) {
      const auto t0 = clock::now();
      model(input);
      sync_device(options.device);
      const auto t1 = clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  } catch (const std::bad_alloc&) {
    throw Error(ErrorCode::out_of_memory, "out of memory at batch size " + std::to_string(batch_size));
  }

  double sum = 0.0;
  for (double s : samples) sum += s;
  r.mean_ms = sum / static_cast<double>(samples.size());
  double var = 0.0;
  for (double s : samples) var += (s - r.mean_ms) * (s - r.mean_ms);
  r.std_ms = samples.size() > 1 ? std::sqrt(var / static_cast<double>(samples.size() - 1)) : 0.0;
  // A clock tick below resolution still counts as a nonzero pass.
  if (r.mean_ms <= 0.0) r.mean_ms = std::chrono::duration<double, std::milli>(clock::duration(1)).count();
  if (options.keep_samples) r.samples = std::move(samples);
  return r;
}

LatencyReport measure(const ModelGraph& model, int batch_size, const MeasureOptions& options) {
  Executor exec(model);
  return measure([&](const Tensor& x) { exec.forward(x, Mode::eval); }, batch_size, model.input, options);
}

double lr_percent(double baseline_ms, double pruned_ms) { return (1.0 - pruned_ms / baseline_ms) * 100.0; }

LatencyReduction latency_reduction(const LatencyReport& baseline, const LatencyReport& pruned) {
  if (baseline.batch_size != pruned.batch_size || baseline.input_shape != pruned.input_shape ||
      baseline.device_label != pruned.device_label)
    throw Error(ErrorCode::protocol_mismatch, "reports differ in batch size, input shape or device");
  if (!(baseline.mean_ms > 0.0)) throw Error(ErrorCode::protocol_mismatch, "baseline mean must be positive");
  return {baseline, pruned, lr_percent(baseline.mean_ms, pruned.mean_ms)};
}

nlohmann::json to_json(const LatencyReport& r) {
  nlohmann::json j{{"device_label", r.device_label}, {"batch_size", r.batch_size},
                   {"input_shape", r.input_shape},   {"warmup_iters", r.warmup_iters},
                   {"timed_iters", r.timed_iters},   {"mean_ms", r.mean_ms},
                   {"std_ms", r.std_ms},             {"seed", r.seed}};
  if (!r.samples.empty()) j["samples"] = r.samples;
  return j;
}

LatencyReport latency_report_from_json(const nlohmann::json& j) {
  LatencyReport r;
  try {
    r.device_label = j.at("device_label").get<std::string>();
    r.batch_size = j.at("batch_size").get<int>();
    r.input_shape = j.at("input_shape").get<std::array<int, 3>>();
    r.warmup_iters = j.at("warmup_iters").get<int>();
    r.timed_iters = j.at("timed_iters").get<int>();
    r.mean_ms = j.at("mean_ms").get<double>();
    r.std_ms = j.at("std_ms").get<double>();
    r.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("samples")) r.samples = j.at("samples").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad latency report: ") + e.what());
  }
  return r;
}

nlohmann::json to_json(const LatencyReduction& r) {
  return {{"baseline", to_json(r.baseline)}, {"pruned", to_json(r.pruned)}, {"lr_percent", r.lr_percent}};
}

}  // namespace layerprune
