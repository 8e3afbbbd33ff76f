#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "layerprune/ops.hpp"
#include "layerprune/tensor.hpp"

namespace layerprune {

enum class Family { vgg, resnet };
enum class BlockType { basic, bottleneck };
enum class UnitKind { conv_layer, residual_block };
enum class ShortcutKind { none, identity, projection };

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  BatchNorm() = default;
  explicit BatchNorm(int channels);

  void reset_statistics();
  bool operator==(const BatchNorm&) const = default;
};

// Convolution with its attached BN. A conv without BN carries a bias.
struct Conv {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out] when !bn
  std::optional<BatchNorm> bn;

  ops::ConvGeometry geometry() const { return {stride, padding}; }
  std::size_t parameter_count() const;
  bool operator==(const Conv&) const = default;
};

struct Linear {
  Tensor weight;  // [classes, features]
  Tensor bias;

  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }
  bool operator==(const Linear&) const = default;
};

struct WeightShape {
  int in_channels = 0;  // N_l
  int filters = 0;      // F_l
  int kernel = 0;       // K_l
};

struct PrunableUnit {
  int index = 0;
  int origin = 0;  // position among the baseline model's units
  UnitKind kind = UnitKind::conv_layer;
  std::vector<Conv> convs;
  ShortcutKind shortcut = ShortcutKind::none;
  std::optional<Conv> projection;
  bool removable = false;

  int in_channels() const { return convs.front().in_channels; }
  int out_channels() const { return convs.back().out_channels; }
  // Filters are the concatenated output channels of every conv in the unit.
  WeightShape weight_shape() const;
  int filter_count() const;
  bool has_bn() const;
  std::vector<double> bn_scales() const;
  // Maps a unit-level filter slot to (conv index, filter index).
  std::pair<int, int> locate_filter(int slot) const;
  // Filters of the last conv in a residual block feed the element-wise sum.
  bool conv_locked(int conv) const;

  bool operator==(const PrunableUnit&) const = default;
};

enum class SlotKind { unit, removed, pool };

struct ModelSignature {
  std::vector<int> filters_per_unit;
  int depth = 0;
  bool operator==(const ModelSignature&) const = default;
};

struct ModelGraph {
  Family family = Family::vgg;
  BlockType block = BlockType::basic;
  bool batch_norm = true;
  std::array<int, 3> input{3, 32, 32};
  int num_classes = 10;
  std::optional<Conv> stem;
  std::vector<PrunableUnit> units;
  // Forward order. Each SlotKind::unit consumes the next entry of units;
  // removed slots are tombstones kept for reporting.
  std::vector<SlotKind> layout;
  Linear classifier;

  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  // Trainable tensors only (no running statistics), canonical order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  ModelSignature signature() const;
  // Bracketed report string: widths, 0 for removed layers, 'M' for pools.
  std::string signature_string() const;

  // Same structure, every tensor zeroed; used as a gradient container.
  ModelGraph zeros_like() const;
  void refresh_indices();

  bool operator==(const ModelGraph&) const = default;
};

// Analytic parameter count derived from shapes only.
std::size_t analytic_parameter_count(const ModelGraph& graph);

enum class PlanMode { layers, filters };

struct PruneBudget {
  enum class Kind { layers_k, filters_n, latency_fraction };
  Kind kind = Kind::layers_k;
  double value = 0.0;
};

struct PrunePlan {
  std::string criterion;
  PlanMode mode = PlanMode::layers;
  std::set<int> removed_units;
  std::map<int, std::set<int>> removed_filters;
  PruneBudget budget;
  std::uint64_t seed = 0;

  bool operator==(const PrunePlan& o) const {
    return criterion == o.criterion && mode == o.mode && removed_units == o.removed_units &&
           removed_filters == o.removed_filters && budget.kind == o.budget.kind && budget.value == o.budget.value &&
           seed == o.seed;
  }
};

inline constexpr int kDefaultFilterFloor = 2;

// Deletes whole units. Successor convs whose input channel count no longer
// matches are re-allocated with N(0, 2/fan_in) weights (seeded by
// plan.seed) and get fresh BN running statistics.
ModelGraph remove_layers(const ModelGraph& graph, const PrunePlan& plan);

// Deletes filters and the matching input channels of the consumer.
ModelGraph remove_filters(const ModelGraph& graph, const PrunePlan& plan, int floor = kDefaultFilterFloor);

ModelGraph apply_plan(const ModelGraph& graph, const PrunePlan& plan, int floor = kDefaultFilterFloor);

std::string to_string(Family family);
std::string to_string(UnitKind kind);
std::string to_string(ShortcutKind kind);
std::string to_string(PlanMode mode);
std::string to_string(PruneBudget::Kind kind);
PruneBudget::Kind parse_budget_kind(const std::string& s);

}  // namespace layerprune
