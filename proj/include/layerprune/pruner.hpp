#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "layerprune/criteria.hpp"
#include "layerprune/dataset.hpp"
#include "layerprune/imprint.hpp"
#include "layerprune/model_graph.hpp"

namespace layerprune {

// weight_norm, taylor, bn, feature_map, imprint, ensemble
const std::vector<std::string>& criterion_names();
// Criteria that produce per-filter scores.
bool is_filter_criterion(const std::string& criterion);
void require_criterion(const std::string& criterion);

struct CriterionOptions {
  int num_batches = kDefaultCriterionBatches;
  ImprintOptions imprint;
  std::vector<std::string> ensemble_of{"weight_norm", "taylor", "bn"};
};

ImportanceTable compute_importance(const ModelGraph& graph, const std::string& criterion,
                                   std::span<const Batch> data, const CriterionOptions& options = {});

// Units a layer plan may pick from the table: removable and not pinned,
// in rank order.
std::vector<int> layer_candidates(const ModelGraph& graph, const ImportanceTable& table);

// The k lowest-ranked candidates. Throws BudgetTooLarge when k exceeds
// the candidate count (or would leave no unit).
PrunePlan plan_layer_prune(const ModelGraph& graph, const ImportanceTable& table, int k, std::uint64_t seed = 0);

// Removes candidates one at a time in rank order until the measured latency
// reduction reaches fraction (0,1) or candidates run out. measure returns a
// mean latency in ms.
using LatencyProbe = std::function<double(const ModelGraph&)>;
PrunePlan plan_latency_prune(const ModelGraph& graph, const ImportanceTable& table, double fraction,
                             const LatencyProbe& measure, std::uint64_t seed = 0);

struct FilterSelection {
  std::map<int, std::set<int>> removed;  // unit -> filter slots
  int selected = 0;
  int skipped = 0;
  std::vector<std::string> log;
};

// Global selection of the n lowest filters after dividing each conv's scores
// by that conv's score-vector L2 norm. Locked convs and convs already at the
// floor are not candidates; a pick that would cross the floor is skipped and
// logged. Throws Exhausted when there is no candidate at all.
FilterSelection select_filters(const ModelGraph& graph, const ImportanceTable& table, int n,
                               int floor = kDefaultFilterFloor);

struct FilterPruneConfig {
  std::string criterion = "taylor";
  int filters_per_step = 100;
  int batches_per_step = 10;
  int steps = 10;
  int floor = kDefaultFilterFloor;
  // Training between steps; lr 0 keeps the model frozen apart from surgery.
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  CriterionOptions criterion_options;

  static FilterPruneConfig cifar();     // 100 filters every 10 mini-batches, 10 steps
  static FilterPruneConfig imagenet();  // 100 filters every 30 mini-batches, 10 steps
};

// Total filters removed at once: 500 for VGG19, 100 for ResNet56.
int one_shot_preset(const std::string& architecture);

struct FilterPruneResult {
  ModelGraph model;
  PrunePlan plan;  // cumulative, in baseline filter coordinates
  std::vector<int> removed_per_step;
  int skipped = 0;
  std::vector<std::string> log;
};

// data is consumed cyclically, batches_per_step batches per step.
FilterPruneResult iterative_filter_prune(const ModelGraph& graph, std::span<const Batch> data,
                                         const FilterPruneConfig& config);

FilterPruneResult one_shot_filter_prune(const ModelGraph& graph, std::span<const Batch> data,
                                        const std::string& criterion, int total_filters,
                                        int floor = kDefaultFilterFloor, const CriterionOptions& options = {});

// Spearman rank correlation of two paired samples; tied values get their
// average rank.
double spearman_rho(std::span<const double> a, std::span<const double> b);
// Correlation of two orderings of the same item set.
double spearman_rho(std::span<const int> order_a, std::span<const int> order_b);

struct SpearmanRow {
  int n_pruned = 0;
  double one_shot_accuracy = 0.0;
  double iterative_accuracy = 0.0;
  double rho = 1.0;
  std::vector<int> one_shot_removed;   // baseline unit indices
  std::vector<int> iterative_removed;  // in removal order
};

// For n = 1..max_removed: one-shot removes the n lowest units of the
// baseline imprint ranking; iterative removes one unit at a time, re-ranking
// after each removal. rho compares the baseline ranking with the ranking
// recomputed after n iterative removals, over the surviving units.
// Accuracies are measured on eval (no fine-tuning).
std::vector<SpearmanRow> spearman_rank_ablation(const ModelGraph& graph, std::span<const Batch> data,
                                                std::span<const Batch> eval, int max_removed,
                                                const ImprintOptions& options = {}, std::uint64_t seed = 0);

}  // namespace layerprune
