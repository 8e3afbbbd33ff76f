#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "layerprune/architecture.hpp"
#include "layerprune/dataset.hpp"
#include "layerprune/executor.hpp"
#include "layerprune/ops.hpp"
#include "layerprune/tensor.hpp"

namespace lp = layerprune;

namespace testing_util {

inline lp::Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return lp::gaussian_tensor(std::move(shape), stddev, rng);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// Relative error normalised by max(|a|,|b|) with a small absolute floor.
inline double rel_diff(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max(floor, std::max(std::abs(a), std::abs(b)));
}

inline std::vector<lp::Batch> random_batches(const lp::ModelGraph& g, int batches, int batch_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> label(0, g.num_classes - 1);
  std::vector<lp::Batch> out;
  for (int b = 0; b < batches; ++b) {
    lp::Batch batch;
    batch.images = lp::gaussian_tensor({batch_size, g.input[0], g.input[1], g.input[2]}, 1.0, rng);
    for (int i = 0; i < batch_size; ++i) batch.labels.push_back(label(rng));
    out.push_back(std::move(batch));
  }
  return out;
}

// Small VGG: 3 convs, no pooling, 8x8 input.
inline lp::ArchitectureDescriptor tiny_vgg(bool bn = true, int classes = 3) {
  lp::ArchitectureDescriptor d;
  d.family = lp::Family::vgg;
  d.batch_norm = bn;
  d.input = {2, 6, 6};
  d.num_classes = classes;
  d.layers = {{lp::LayerToken::Kind::conv, 4}, {lp::LayerToken::Kind::pool, 0}, {lp::LayerToken::Kind::conv, 5},
              {lp::LayerToken::Kind::conv, 5}};
  return d;
}

// Small ResNet: stem 4, blocks (4,4) s1, (6,6) s2, (6,6) s1.
inline lp::ArchitectureDescriptor tiny_resnet(int classes = 3) {
  lp::ArchitectureDescriptor d;
  d.family = lp::Family::resnet;
  d.input = {2, 8, 8};
  d.num_classes = classes;
  d.stem_width = 4;
  d.blocks = {{{4, 4}, 1, false}, {{6, 6}, 2, false}, {{6, 6}, 1, false}};
  return d;
}

inline double model_loss(const lp::ModelGraph& g, const lp::Batch& b, lp::Mode mode = lp::Mode::eval) {
  lp::ModelGraph copy = g;
  lp::Executor exec(copy);
  return lp::ops::softmax_cross_entropy(exec.forward(b.images, mode), b.labels).loss;
}

// Fresh BN (beta 0, stats 0/1) puts all-zero input pixels exactly on a ReLU
// kink in eval mode; random offsets move them off it.
inline void jitter_bn(lp::ModelGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& [name, t] : g.named_tensors()) {
    const bool shift = name.ends_with("bn.beta") || name.ends_with("bn.running_mean");
    const bool var = name.ends_with("bn.running_var");
    if (!shift && !var) continue;
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = shift ? u(rng) : 1.2 + u(rng);
  }
}

// Two convs, no pooling.
inline lp::ArchitectureDescriptor two_layer_vgg(int classes = 3) {
  lp::ArchitectureDescriptor d;
  d.family = lp::Family::vgg;
  d.input = {2, 5, 5};
  d.num_classes = classes;
  d.layers = {{lp::LayerToken::Kind::conv, 3}, {lp::LayerToken::Kind::conv, 4}};
  return d;
}

// Random layer-mode plan over removable units that keeps the classifier's
// input width (the last surviving unit must still emit it).
inline lp::PrunePlan random_layer_plan(const lp::ModelGraph& g, std::mt19937_64& rng) {
  const int features = g.classifier.in_features();
  for (;;) {
    lp::PrunePlan p;
    p.mode = lp::PlanMode::layers;
    p.seed = rng();
    std::bernoulli_distribution coin(0.4);
    for (const auto& u : g.units)
      if (u.removable && coin(rng)) p.removed_units.insert(u.index);
    int last = -1;
    for (const auto& u : g.units)
      if (!p.removed_units.contains(u.index)) last = u.index;
    if (last >= 0 && g.units[last].out_channels() == features) return p;
  }
}

// Random filter-mode plan: any subset of each unlocked conv that leaves at
// least floor filters.
inline lp::PrunePlan random_filter_plan(const lp::ModelGraph& g, std::mt19937_64& rng, int floor = 2) {
  lp::PrunePlan p;
  p.mode = lp::PlanMode::filters;
  for (const auto& u : g.units) {
    int offset = 0;
    for (std::size_t j = 0; j < u.convs.size(); ++j) {
      const int n = u.convs[j].out_channels;
      if (!u.conv_locked(static_cast<int>(j)) && n > floor) {
        std::vector<int> slots(n);
        for (int f = 0; f < n; ++f) slots[f] = offset + f;
        std::shuffle(slots.begin(), slots.end(), rng);
        const int k = static_cast<int>(rng() % (n - floor + 1));
        for (int i = 0; i < k; ++i) p.removed_filters[u.index].insert(slots[i]);
      }
      offset += n;
    }
  }
  return p;
}

// Parameter count of the pruned model, from the baseline widths and the plan.
inline std::size_t expected_parameters(const lp::ModelGraph& g, const lp::PrunePlan& plan) {
  auto conv_params = [&](int in, int out, int k) -> std::size_t {
    return static_cast<std::size_t>(in) * out * k * k + (g.batch_norm ? 2 : 1) * static_cast<std::size_t>(out);
  };
  std::size_t total = 0;
  int in = g.input[0];
  if (g.stem) {
    total += conv_params(in, g.stem->out_channels, g.stem->kernel);
    in = g.stem->out_channels;
  }
  for (const auto& u : g.units) {
    if (plan.removed_units.contains(u.index)) continue;
    const auto it = plan.removed_filters.find(u.index);
    const int block_in = in;
    int offset = 0;
    for (const auto& c : u.convs) {
      int out = c.out_channels;
      if (it != plan.removed_filters.end())
        for (int s : it->second) out -= s >= offset && s < offset + c.out_channels;
      total += conv_params(in, out, c.kernel);
      offset += c.out_channels;
      in = out;
    }
    if (u.projection) total += conv_params(block_in, u.projection->out_channels, u.projection->kernel);
  }
  return total + static_cast<std::size_t>(in) * g.num_classes + g.num_classes;
}

}  // namespace testing_util
