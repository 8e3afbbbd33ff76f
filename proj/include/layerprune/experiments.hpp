#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "layerprune/dataset.hpp"
#include "layerprune/latency.hpp"
#include "layerprune/model_graph.hpp"
#include "layerprune/pruner.hpp"
#include "layerprune/training.hpp"

namespace layerprune {

// Small 32x32 10-class benchmark: the procedural grating task by default,
// or a slice of CIFAR-10 binary batches.
struct DeskConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::filesystem::path path;        // directory holding the cifar binaries
  int train_samples = 2000;
  int val_samples = 500;
  double fraction = 1.0;  // of the cifar training split
  int num_classes = 10;
  std::uint64_t seed = 0;
};

struct DeskData {
  Dataset train;
  Dataset val;
};

DeskData load_desk_data(const DeskConfig& config);

enum class SweepFamily { filter, layer };
std::string to_string(SweepFamily f);
SweepFamily parse_sweep_family(const std::string& s);

struct RandomSweepConfig {
  std::string architecture = "toy_resnet";
  int count = 100;
  double ratio_min = 0.0;
  double ratio_max = 0.9;
  int retain_min = 1;
  int retain_max = 0;  // 0: every unit
  std::uint64_t seed = 0;
  std::vector<int> batch_sizes{1};
  std::vector<SweepFamily> families{SweepFamily::filter, SweepFamily::layer};
  MeasureOptions measure;
  int floor = kDefaultFilterFloor;
  int max_attempts = 100;

  void validate(const ModelGraph& baseline) const;
};

struct RandomModel {
  SweepFamily family = SweepFamily::filter;
  int index = 0;
  int attempts = 1;
  PrunePlan plan;
  std::vector<std::string> resample_causes;
};

// Deterministic in (config.seed, family, index): per-conv ratio p ~ U[min,max]
// prunes floor(p*F) random filters (floor enforced) for the filter family;
// the layer family keeps M ~ U{min..max} units, always including the
// non-removable ones. Draws that cannot be realised are resampled.
RandomModel random_model(const ModelGraph& baseline, const RandomSweepConfig& config, SweepFamily family, int index);

struct SweepEntry {
  SweepFamily family = SweepFamily::filter;
  int index = 0;
  int attempts = 1;
  std::string signature;
  std::vector<int> retained;  // baseline unit indices
  int batch_size = 1;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double lr_percent = 0.0;
  std::optional<double> accuracy;
};

struct ResampleEvent {
  SweepFamily family = SweepFamily::filter;
  int index = 0;
  int attempt = 0;
  std::string cause;
};

struct SweepResult {
  std::vector<LatencyReport> baseline;  // one per batch size
  std::vector<SweepEntry> entries;
  std::vector<ResampleEvent> resamples;
};

// Optional accuracy attachment: each model is trained under the recipe.
struct SweepTraining {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  TrainRecipe recipe;
};

SweepResult random_sweep(const ModelGraph& baseline, const RandomSweepConfig& config,
                         const SweepTraining* training = nullptr);

struct MatrixConfig {
  std::vector<std::string> criteria{"weight_norm", "taylor", "bn", "feature_map", "imprint", "ensemble"};
  std::vector<int> budgets{1, 2, 3};
  TrainRecipe recipe;
  CriterionOptions criterion_options;
  int data_batch_size = 64;
  bool measure_latency = true;
  MeasureOptions measure;
  std::uint64_t seed = 0;
};

struct MatrixCell {
  std::string criterion;
  int budget = 0;
  std::optional<double> accuracy;
  std::optional<double> lr_percent;
  std::string signature;
  std::vector<int> removed;
  std::string error;  // non-empty for a failed cell
};

struct MatrixResult {
  double baseline_accuracy = 0.0;
  std::optional<LatencyReport> baseline_latency;
  std::vector<MatrixCell> cells;  // criterion-major
};

// Rank, plan, prune, fine-tune and measure every criterion x budget cell.
MatrixResult criterion_matrix(const ModelGraph& graph, const Dataset& train, const Dataset& val,
                              const MatrixConfig& config);

struct FilterAblationConfig {
  std::vector<std::string> criteria{"weight_norm", "taylor", "bn", "feature_map"};
  FilterPruneConfig iterative = FilterPruneConfig::cifar();
  TrainRecipe recipe;
  int data_batch_size = 32;
  std::uint64_t seed = 0;
};

struct FilterAblationRow {
  std::string criterion;
  double iterative_accuracy = 0.0;
  double one_shot_accuracy = 0.0;
  int iterative_removed = 0;
  int one_shot_removed = 0;
  std::string iterative_signature;
  std::string one_shot_signature;
};

struct FilterAblationResult {
  std::vector<FilterAblationRow> rows;
  double median_iterative = 0.0;
  double median_one_shot = 0.0;
};

// Iterative pruning per config, then one-shot pruning of the same number
// of filters; both fine-tuned with the same recipe.
FilterAblationResult filter_ablation(const ModelGraph& graph, const Dataset& train, const Dataset& val,
                                     const FilterAblationConfig& config);

double median(std::vector<double> v);

struct ScratchComparison {
  std::string signature;
  double finetuned_accuracy = 0.0;
  double scratch_accuracy = 0.0;
};

// Fine-tunes the pruned model and trains its architecture from a fresh
// initialisation.
ScratchComparison scratch_vs_finetune(const ModelGraph& pruned, const Dataset& train, const Dataset& val,
                                      const TrainRecipe& finetune_recipe, const TrainRecipe& scratch_recipe,
                                      std::uint64_t init_seed);

}  // namespace layerprune
