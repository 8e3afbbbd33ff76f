#pragma once

#include <vector>

#include "layerprune/model_graph.hpp"
#include "layerprune/ops.hpp"
#include "layerprune/tensor.hpp"

namespace layerprune {

enum class Mode { eval, train };

namespace detail {
struct ConvAddr {
  int unit = -1;  // -1: stem
  int conv = 0;   // -1: projection
};
}  // namespace detail

// Compiles a ModelGraph into a linear tape and runs it forward/backward.
// Every intermediate is kept, so unit outputs (post-activation), their
// pre-activation sums and their gradients can be inspected after a pass.
class Executor {
 public:
  explicit Executor(const ModelGraph& graph);
  // Mutable binding: train mode updates the graph's BN running statistics.
  explicit Executor(ModelGraph& graph);

  Tensor forward(const Tensor& input, Mode mode = Mode::eval);

  // Accumulates parameter gradients into grads (a zeros_like() of the
  // bound graph) and fills activation gradients.
  void backward(const Tensor& grad_logits, ModelGraph& grads);

  const Tensor& unit_output(int unit) const;
  const Tensor& unit_preactivation(int unit) const;
  const Tensor& unit_output_grad(int unit) const;
  // Feature map produced by conv j of a unit, after its nonlinearity (for
  // the last conv of a residual block this is the block output).
  const Tensor& conv_feature(int unit, int conv) const;
  const Tensor& conv_feature_grad(int unit, int conv) const;

 private:
  using ConvAddr = detail::ConvAddr;
  enum class Op { conv, batch_norm, relu, max_pool, add, global_pool, linear };
  struct Node {
    Op op;
    int in = -1;
    int in2 = -1;
    int out = -1;
    ConvAddr addr;
    ops::BatchNormCache bn_cache;
    std::vector<std::size_t> argmax;
  };

  void compile();
  int new_slot();
  int emit(Op op, int in, ConvAddr addr = {}, int in2 = -1);
  int emit_conv_bn(ConvAddr addr, const Conv& conv, int in);
  const Conv& conv_at(const ModelGraph& g, ConvAddr a) const;
  Conv& conv_at(ModelGraph& g, ConvAddr a) const;

  const ModelGraph* graph_;
  ModelGraph* mutable_graph_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<int> unit_out_;
  std::vector<int> unit_pre_;
  std::vector<std::vector<int>> conv_feature_;
  int logits_slot_ = -1;
};

}  // namespace layerprune
