#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "layerprune/dataset.hpp"
#include "layerprune/model_graph.hpp"

namespace layerprune {

// Per-criterion scores. filter_scores[u] follows the unit's filter slots
// (concatenated output channels of its convs); layer_scores[u] is the
// unit-level importance; rank_order lists units least important first.
struct ImportanceTable {
  std::string criterion;
  std::map<int, std::vector<double>> filter_scores;
  std::map<int, double> layer_scores;
  std::vector<int> rank_order;
  // Units reported in the table that a layer plan must never select.
  std::set<int> pinned;

  // Ascending by layer score, ties by ascending unit index.
  void rank();
  std::set<int> units() const;
};

// Builds a table whose layer score is the mean of each unit's filter scores.
ImportanceTable table_from_filter_scores(std::string criterion, std::map<int, std::vector<double>> filter_scores);

inline constexpr int kDefaultCriterionBatches = 10;

// Mean over filters of ||W[:, i, :, :]||_2.
ImportanceTable weight_norm_importance(const ModelGraph& graph);

// Mean over filters of ||G ⊙ W||_2 restricted to the filter, where G is the
// loss gradient averaged over num_batches mini-batches (eval-mode BN).
ImportanceTable taylor_weight_importance(const ModelGraph& graph, std::span<const Batch> data,
                                         int num_batches = kDefaultCriterionBatches);

// Mean of squared BN scales.
ImportanceTable bn_scale_importance(const ModelGraph& graph);

// Per channel: ||dL/dA ⊙ A||_2 over the spatial map divided by its area,
// averaged over samples. A is the conv's post-activation feature map; the
// per-sample loss gradient is used.
ImportanceTable feature_map_importance(const ModelGraph& graph, std::span<const Batch> data,
                                       int num_batches = kDefaultCriterionBatches);

// Sum of 0-based rank positions across tables.
ImportanceTable ensemble_rank(std::span<const ImportanceTable> tables);

}  // namespace layerprune
