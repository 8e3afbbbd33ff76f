#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "layerprune/tensor.hpp"

namespace layerprune {

struct Batch {
  Tensor images;  // [B,C,H,W]
  std::vector<int> labels;
};

struct Dataset {
  Tensor images;  // [N,C,H,W]
  std::vector<int> labels;
  int num_classes = 10;

  int size() const { return static_cast<int>(labels.size()); }
  Dataset slice(int begin, int end) const;
};

// Procedural image task: windowed sinusoidal gratings whose orientation
// encodes the class (classes evenly spaced over 180 degrees, jittered),
// with random frequency, phase, colour, contrast, position and additive
// noise. Deterministic in the seed.
struct SyntheticSpec {
  int samples = 2000;
  int num_classes = 10;
  int channels = 3;
  int size = 32;
  double noise = 1.0;
  double jitter = 0.12;  // orientation jitter, radians
  std::uint64_t seed = 0;
};

Dataset make_synthetic(const SyntheticSpec& spec);

// CIFAR-10 binary batches (data_batch_*.bin / test_batch.bin): one label
// byte followed by 3072 pixel bytes per record. Pixels scaled to [0,1] and
// standardised per channel with the usual CIFAR statistics.
Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& files, int max_samples = -1);

// Fixed batch order when shuffle_seed is empty.
std::vector<Batch> make_batches(const Dataset& data, int batch_size,
                                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

}  // namespace layerprune
