#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "layerprune/dataset.hpp"
#include "layerprune/model_graph.hpp"

namespace layerprune {

enum class Regime { scratch, finetune };

struct TrainRecipe {
  Regime regime = Regime::finetune;
  int epochs = 30;
  double learning_rate = 1e-3;
  std::map<int, double> decay;  // epoch index -> multiplicative factor
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 64;
  std::uint64_t seed = 0;

  // 164 epochs, lr 0.1, x0.1 at epochs 81/121/151.
  static TrainRecipe cifar_scratch();
  // 30 epochs, lr 1e-3.
  static TrainRecipe cifar_finetune();
  // 160 epochs, lr 0.1, x0.1 at epochs 81/122.
  static TrainRecipe long_finetune();

  void validate() const;
  double learning_rate_at(int epoch) const;
};

std::string to_string(Regime regime);
Regime parse_regime(const std::string& s);

// SGD with momentum and L2 weight decay over ModelGraph::parameters().
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ModelGraph& model, const ModelGraph& grads, double learning_rate);
  // Surgery invalidates momentum buffers.
  void reset() { velocity_.clear(); }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

struct EpochStats {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  ModelGraph model;  // best-validation checkpoint
  ModelGraph last;   // after the final epoch
  std::vector<EpochStats> curve;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;

  int epochs_run() const { return static_cast<int>(curve.size()); }
};

// Plain supervised loop; the per-epoch shuffle is seeded from recipe.seed.
// Throws Divergence if the loss turns non-finite.
TrainResult finetune(const ModelGraph& model, const Dataset& train, const Dataset& val, const TrainRecipe& recipe);

// One SGD step on a batch; returns the batch loss.
double train_step(ModelGraph& model, const Batch& batch, SgdOptimizer& opt, double learning_rate);

double evaluate_accuracy(const ModelGraph& model, const Dataset& data, int batch_size = 128);
double evaluate_accuracy(const ModelGraph& model, std::span<const Batch> batches);
double mean_loss(const ModelGraph& model, const Batch& batch);

}  // namespace layerprune
