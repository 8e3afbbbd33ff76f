#include "layerprune/training.hpp"

#include <cmath>

#include "layerprune/error.hpp"
#include "layerprune/executor.hpp"
#include "layerprune/ops.hpp"

namespace layerprune {

TrainRecipe TrainRecipe::cifar_scratch() {
  TrainRecipe r;
  r.regime = Regime::scratch;
  r.epochs = 164;
  r.learning_rate = 0.1;
  r.decay = {{81, 0.1}, {121, 0.1}, {151, 0.1}};
  r.weight_decay = 1e-4;
  return r;
}

TrainRecipe TrainRecipe::cifar_finetune() {
  TrainRecipe r;
  r.regime = Regime::finetune;
  r.epochs = 30;
  r.learning_rate = 1e-3;
  return r;
}

TrainRecipe TrainRecipe::long_finetune() {
  TrainRecipe r;
  r.regime = Regime::finetune;
  r.epochs = 160;
  r.learning_rate = 0.1;
  r.decay = {{81, 0.1}, {122, 0.1}};
  r.weight_decay = 1e-4;
  return r;
}

void TrainRecipe::validate() const {
  if (epochs < 0) throw Error(ErrorCode::config, "epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw Error(ErrorCode::config, "learning rate must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::config, "batch size must be positive");
  for (const auto& [epoch, factor] : decay) {
    if (epoch <= 0 || epoch >= epochs)
      throw Error(ErrorCode::config, "decay epoch " + std::to_string(epoch) + " outside (0, epochs)");
    if (!(factor > 0.0)) throw Error(ErrorCode::config, "decay factor must be positive");
  }
}

double TrainRecipe::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (const auto& [e, factor] : decay)
    if (epoch >= e) lr *= factor;
  return lr;
}

std::string to_string(Regime regime) { return regime == Regime::scratch ? "scratch" : "finetune"; }

Regime parse_regime(const std::string& s) {
  if (s == "scratch") return Regime::scratch;
  if (s == "finetune") return Regime::finetune;
  throw Error(ErrorCode::config, "unknown regime '" + s + "'");
}

void SgdOptimizer::step(ModelGraph& model, const ModelGraph& grads, double learning_rate) {
  auto params = model.parameters();
  auto gparams = grads.parameters();
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const Tensor* p : params) velocity_.emplace_back(p->shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *gparams[i];
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double d = g[k] + weight_decay_ * p[k];
      v[k] = momentum_ * v[k] + d;
      p[k] -= learning_rate * v[k];
    }
  }
}

double train_step(ModelGraph& model, const Batch& batch, SgdOptimizer& opt, double learning_rate) {
  Executor exec(model);
  Tensor logits = exec.forward(batch.images, Mode::train);
  ops::LossResult loss = ops::softmax_cross_entropy(logits, batch.labels);
  if (!std::isfinite(loss.loss)) throw Error(ErrorCode::divergence, "training loss became non-finite");
  ModelGraph grads = model.zeros_like();
  exec.backward(loss.grad, grads);
  opt.step(model, grads, learning_rate);
  return loss.loss;
}

double evaluate_accuracy(const ModelGraph& model, std::span<const Batch> batches) {
  Executor exec(model);
  long correct = 0, total = 0;
  for (const Batch& b : batches) {
    const auto pred = ops::argmax_rows(exec.forward(b.images, Mode::eval));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
    total += static_cast<long>(pred.size());
  }
  return total ? static_cast<double>(correct) / total : 0.0;
}

double evaluate_accuracy(const ModelGraph& model, const Dataset& data, int batch_size) {
  return evaluate_accuracy(model, make_batches(data, batch_size));
}

double mean_loss(const ModelGraph& model, const Batch& batch) {
  Executor exec(model);
  return ops::softmax_cross_entropy(exec.forward(batch.images, Mode::eval), batch.labels).loss;
}

TrainResult finetune(const ModelGraph& model, const Dataset& train, const Dataset& val, const TrainRecipe& recipe) {
  recipe.validate();
  TrainResult result;
  result.model = model;
  result.last = model;
  if (recipe.epochs == 0) return result;
  ModelGraph current = model;
  SgdOptimizer opt(recipe.momentum, recipe.weight_decay);
  const auto val_batches = make_batches(val, 128);
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    const double lr = recipe.learning_rate_at(epoch);
    double loss_sum = 0.0;
    long correct = 0, seen = 0;
    for (const Batch& b : make_batches(train, recipe.batch_size, recipe.seed * 1000003ULL + epoch)) {
      Executor exec(current);
      Tensor logits = exec.forward(b.images, Mode::train);
      ops::LossResult loss = ops::softmax_cross_entropy(logits, b.labels);
      if (!std::isfinite(loss.loss))
        throw Error(ErrorCode::divergence, "loss became non-finite at epoch " + std::to_string(epoch));
      ModelGraph grads = current.zeros_like();
      exec.backward(loss.grad, grads);
      opt.step(current, grads, lr);
      loss_sum += loss.loss * static_cast<double>(b.labels.size());
      correct += loss.correct;
      seen += static_cast<long>(b.labels.size());
    }
    EpochStats s;
    s.epoch = epoch;
    s.learning_rate = lr;
    s.train_loss = loss_sum / seen;
    s.train_accuracy = static_cast<double>(correct) / seen;
    s.val_accuracy = evaluate_accuracy(current, val_batches);
    result.curve.push_back(s);
    if (result.best_epoch < 0 || s.val_accuracy > result.best_val_accuracy) {
      result.best_epoch = epoch;
      result.best_val_accuracy = s.val_accuracy;
      result.model = current;
    }
  }
  result.last = std::move(current);
  return result;
}

}  // namespace layerprune
