#pragma once

#include <span>
#include <vector>

#include "layerprune/criteria.hpp"
#include "layerprune/dataset.hpp"
#include "layerprune/model_graph.hpp"

namespace layerprune {

inline constexpr int kDefaultEmbeddingBudget = 512;

// d = round(sqrt(budget / channels)), at least 1.
int pool_dim(int budget, int channels);

// Adaptive average pooling of one sample's map [n,H,W] (or [1,n,H,W]) to
// d x d, flattened channel-major to length d*d*n.
std::vector<double> embed(const Tensor& feature_map, int budget);

// Embeds every sample of a batched map [B,n,H,W]; row b is sample b.
std::vector<std::vector<double>> embed_batch(const Tensor& feature_maps, int budget);

// Imprinted proxy classifier: column c is the mean embedding of class c.
struct ImprintWeights {
  int length = 0;
  int classes = 0;
  std::vector<double> columns;  // column-major, length x classes

  std::span<const double> column(int c) const {
    return std::span<const double>(columns).subspan(static_cast<std::size_t>(c) * length, length);
  }
};

// Single-pass per-class sums.
class Imprinter {
 public:
  Imprinter(int length, int classes);
  void add(std::span<const double> embedding, int label);
  // Throws EmptyClass when some class never appeared.
  ImprintWeights weights(bool normalize = false) const;
  const std::vector<int>& class_counts() const { return counts_; }

 private:
  int length_;
  int classes_;
  std::vector<double> sums_;
  std::vector<int> counts_;
};

ImprintWeights imprint_weights(std::span<const std::vector<double>> embeddings, std::span<const int> labels,
                               int classes, bool normalize = false);

// argmax_c P[:,c]^T e, lowest class id on ties.
int proxy_predict(const ImprintWeights& weights, std::span<const double> embedding);

struct ImprintProxy {
  int unit_index = 0;
  int pool_dim = 1;
  int embedding_length = 0;
  ImprintWeights weights;
  double proxy_accuracy = 0.0;
  std::vector<int> class_counts;
};

struct AccuracyLadder {
  std::vector<int> candidates;  // unit indices, forward order
  std::vector<double> proxy_accuracies;
  std::vector<double> gains;
  double chance = 0.0;
};

struct ImprintOptions {
  int budget = kDefaultEmbeddingBudget;
  // L2-normalise embeddings and imprinted columns.
  bool normalized = false;
  // Imprint on the pre-activation output (before the final nonlinearity).
  bool preactivation = false;
  // Score proxies on this stream instead of the imprinting stream.
  std::span<const Batch> held_out{};
};

struct ImprintRanking {
  AccuracyLadder ladder;
  ImportanceTable table;
  std::vector<ImprintProxy> proxies;
};

// Candidates are all removable units plus the final unit (pinned). One pass
// imprints every proxy, a second pass scores them; layer score = accuracy
// gain over the previous candidate (first candidate: gain over 1/C).
ImprintRanking rank_layers_by_imprint(const ModelGraph& graph, std::span<const Batch> data,
                                      const ImprintOptions& options = {});

std::vector<int> imprint_candidates(const ModelGraph& graph);

}  // namespace layerprune
