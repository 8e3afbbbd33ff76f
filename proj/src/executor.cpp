#include "layerprune/executor.hpp"

#include "layerprune/error.hpp"

namespace layerprune {

Executor::Executor(const ModelGraph& graph) : graph_(&graph) { compile(); }

Executor::Executor(ModelGraph& graph) : graph_(&graph), mutable_graph_(&graph) { compile(); }

int Executor::new_slot() {
  values_.emplace_back();
  return static_cast<int>(values_.size()) - 1;
}

int Executor::emit(Op op, int in, ConvAddr addr, int in2) {
  Node n;
  n.op = op;
  n.in = in;
  n.in2 = in2;
  n.addr = addr;
  n.out = new_slot();
  nodes_.push_back(std::move(n));
  return nodes_.back().out;
}

int Executor::emit_conv_bn(ConvAddr addr, const Conv& conv, int in) {
  int s = emit(Op::conv, in, addr);
  if (conv.bn) s = emit(Op::batch_norm, s, addr);
  return s;
}

const Conv& Executor::conv_at(const ModelGraph& g, ConvAddr a) const {
  if (a.unit < 0) return *g.stem;
  const PrunableUnit& u = g.units[a.unit];
  return a.conv < 0 ? *u.projection : u.convs[a.conv];
}

Conv& Executor::conv_at(ModelGraph& g, ConvAddr a) const {
  if (a.unit < 0) return *g.stem;
  PrunableUnit& u = g.units[a.unit];
  return a.conv < 0 ? *u.projection : u.convs[a.conv];
}

void Executor::compile() {
  const ModelGraph& g = *graph_;
  int cur = new_slot();  // network input
  if (g.stem) cur = emit(Op::relu, emit_conv_bn({-1, 0}, *g.stem, cur));
  unit_out_.assign(g.units.size(), -1);
  unit_pre_.assign(g.units.size(), -1);
  conv_feature_.assign(g.units.size(), {});
  std::size_t next = 0;
  for (SlotKind slot : g.layout) {
    if (slot == SlotKind::removed) continue;
    if (slot == SlotKind::pool) {
      cur = emit(Op::max_pool, cur);
      continue;
    }
    const int ui = static_cast<int>(next++);
    const PrunableUnit& u = g.units[ui];
    auto& features = conv_feature_[ui];
    if (u.kind == UnitKind::conv_layer) {
      unit_pre_[ui] = emit_conv_bn({ui, 0}, u.convs[0], cur);
      cur = emit(Op::relu, unit_pre_[ui]);
      features.push_back(cur);
    } else {
      const int block_in = cur;
      int x = block_in;
      const int last = static_cast<int>(u.convs.size()) - 1;
      for (int j = 0; j < last; ++j) {
        x = emit(Op::relu, emit_conv_bn({ui, j}, u.convs[j], x));
        features.push_back(x);
      }
      x = emit_conv_bn({ui, last}, u.convs[last], x);
      const int shortcut = u.projection ? emit_conv_bn({ui, -1}, *u.projection, block_in) : block_in;
      unit_pre_[ui] = emit(Op::add, x, {}, shortcut);
      cur = emit(Op::relu, unit_pre_[ui]);
      features.push_back(cur);
    }
    unit_out_[ui] = cur;
  }
  cur = emit(Op::global_pool, cur);
  logits_slot_ = emit(Op::linear, cur);
}

Tensor Executor::forward(const Tensor& input, Mode mode) {
  const ModelGraph& g = *graph_;
  if (mode == Mode::train && !mutable_graph_)
    throw Error(ErrorCode::config, "train mode needs a mutable graph binding");
  if (input.rank() != 4 || input.dim(1) != g.input[0])
    throw Error(ErrorCode::shape_mismatch, "input " + shape_string(input.shape()) + " does not match model input");
  values_[0] = input;
  grads_.clear();
  for (Node& n : nodes_) {
    const Tensor& x = values_[n.in];
    switch (n.op) {
      case Op::conv: {
        const Conv& c = conv_at(g, n.addr);
        values_[n.out] = ops::conv2d(x, c.weight, c.bias, c.geometry());
        break;
      }
      case Op::batch_norm: {
        if (mode == Mode::train) {
          BatchNorm& bn = *conv_at(*mutable_graph_, n.addr).bn;
          values_[n.out] = ops::batch_norm_train(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, n.bn_cache);
        } else {
          const BatchNorm& bn = *conv_at(g, n.addr).bn;
          values_[n.out] =
              ops::batch_norm_eval(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, &n.bn_cache);
        }
        break;
      }
      case Op::relu:
        values_[n.out] = ops::relu(x);
        break;
      case Op::max_pool:
        values_[n.out] = ops::max_pool2x2(x, n.argmax);
        break;
      case Op::add:
        values_[n.out] = x;
        ops::add_inplace(values_[n.out], values_[n.in2]);
        break;
      case Op::global_pool: {
        Tensor p = ops::adaptive_avg_pool(x, 1);
        p.reshape({x.dim(0), x.dim(1)});
        values_[n.out] = std::move(p);
        break;
      }
      case Op::linear:
        values_[n.out] = ops::linear(x, g.classifier.weight, g.classifier.bias);
        break;
    }
  }
  return values_[logits_slot_];
}

void Executor::backward(const Tensor& grad_logits, ModelGraph& grads) {
  const ModelGraph& g = *graph_;
  grads_.assign(values_.size(), Tensor());
  grads_[logits_slot_] = grad_logits;
  auto accumulate = [&](int slot, Tensor&& t) {
    if (grads_[slot].empty())
      grads_[slot] = std::move(t);
    else
      ops::add_inplace(grads_[slot], t);
  };
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (grads_[n.out].empty()) continue;
    const Tensor& dy = grads_[n.out];
    const bool need_input = n.in != 0;
    switch (n.op) {
      case Op::conv: {
        const Conv& c = conv_at(g, n.addr);
        Conv& gc = conv_at(grads, n.addr);
        Tensor dx;
        ops::conv2d_backward(values_[n.in], c.weight, dy, c.geometry(), need_input ? &dx : nullptr, gc.weight,
                             c.bias.empty() ? nullptr : &gc.bias);
        if (need_input) accumulate(n.in, std::move(dx));
        break;
      }
      case Op::batch_norm: {
        const BatchNorm& bn = *conv_at(g, n.addr).bn;
        BatchNorm& gbn = *conv_at(grads, n.addr).bn;
        Tensor dx;
        ops::batch_norm_backward(dy, n.bn_cache, bn.gamma, dx, gbn.gamma, gbn.beta);
        accumulate(n.in, std::move(dx));
        break;
      }
      case Op::relu:
        accumulate(n.in, ops::relu_backward(values_[n.out], dy));
        break;
      case Op::max_pool:
        accumulate(n.in, ops::max_pool2x2_backward(values_[n.in].shape(), n.argmax, dy));
        break;
      case Op::add:
        accumulate(n.in, Tensor(dy));
        accumulate(n.in2, Tensor(dy));
        break;
      case Op::global_pool: {
        Tensor d = dy;
        d.reshape({dy.dim(0), dy.dim(1), 1, 1});
        accumulate(n.in, ops::adaptive_avg_pool_backward(values_[n.in].shape(), d));
        break;
      }
      case Op::linear: {
        Tensor dx;
        ops::linear_backward(values_[n.in], g.classifier.weight, dy, &dx, grads.classifier.weight,
                             grads.classifier.bias);
        accumulate(n.in, std::move(dx));
        break;
      }
    }
  }
}

const Tensor& Executor::unit_output(int unit) const { return values_.at(unit_out_.at(unit)); }

const Tensor& Executor::unit_preactivation(int unit) const { return values_.at(unit_pre_.at(unit)); }

const Tensor& Executor::unit_output_grad(int unit) const {
  if (grads_.empty()) throw Error(ErrorCode::no_gradients, "backward has not run");
  const Tensor& t = grads_.at(unit_out_.at(unit));
  if (t.empty()) throw Error(ErrorCode::no_gradients, "no gradient reached unit " + std::to_string(unit));
  return t;
}

const Tensor& Executor::conv_feature(int unit, int conv) const {
  return values_.at(conv_feature_.at(unit).at(conv));
}

const Tensor& Executor::conv_feature_grad(int unit, int conv) const {
  if (grads_.empty()) throw Error(ErrorCode::no_gradients, "backward has not run");
  const Tensor& t = grads_.at(conv_feature_.at(unit).at(conv));
  if (t.empty())
    throw Error(ErrorCode::no_gradients,
                "no gradient reached unit " + std::to_string(unit) + " conv " + std::to_string(conv));
  return t;
}

}  // namespace layerprune
