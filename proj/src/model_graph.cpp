#include "layerprune/model_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "layerprune/error.hpp"

namespace layerprune {

BatchNorm::BatchNorm(int channels)
    : gamma({channels}, 1.0), beta({channels}, 0.0), running_mean({channels}, 0.0), running_var({channels}, 1.0) {}

void BatchNorm::reset_statistics() {
  running_mean.fill(0.0);
  running_var.fill(1.0);
}

std::size_t Conv::parameter_count() const {
  const std::size_t w = static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  return w + (bn ? 2u * out_channels : static_cast<std::size_t>(out_channels));
}

WeightShape PrunableUnit::weight_shape() const {
  return {in_channels(), filter_count(), convs.front().kernel};
}

int PrunableUnit::filter_count() const {
  int n = 0;
  for (const Conv& c : convs) n += c.out_channels;
  return n;
}

bool PrunableUnit::has_bn() const {
  return std::all_of(convs.begin(), convs.end(), [](const Conv& c) { return c.bn.has_value(); });
}

std::vector<double> PrunableUnit::bn_scales() const {
  std::vector<double> out;
  for (const Conv& c : convs) {
    if (!c.bn) return {};
    out.insert(out.end(), c.bn->gamma.values().begin(), c.bn->gamma.values().end());
  }
  return out;
}

std::pair<int, int> PrunableUnit::locate_filter(int slot) const {
  if (slot < 0) throw Error(ErrorCode::invalid_plan, "negative filter index");
  int remaining = slot;
  for (std::size_t j = 0; j < convs.size(); ++j) {
    if (remaining < convs[j].out_channels) return {static_cast<int>(j), remaining};
    remaining -= convs[j].out_channels;
  }
  throw Error(ErrorCode::invalid_plan, "filter index " + std::to_string(slot) + " out of range for unit " +
                                           std::to_string(index) + " with " + std::to_string(filter_count()) +
                                           " filters");
}

bool PrunableUnit::conv_locked(int conv) const {
  return kind == UnitKind::residual_block && conv == static_cast<int>(convs.size()) - 1;
}

namespace {

template <typename G, typename T>
std::vector<std::pair<std::string, T*>> collect_tensors(G& g, bool with_buffers) {
  std::vector<std::pair<std::string, T*>> out;
  auto add_conv = [&](const std::string& prefix, auto& conv) {
    out.emplace_back(prefix + ".weight", &conv.weight);
    if (!conv.bias.empty()) out.emplace_back(prefix + ".bias", &conv.bias);
    if (conv.bn) {
      out.emplace_back(prefix + ".bn.gamma", &conv.bn->gamma);
      out.emplace_back(prefix + ".bn.beta", &conv.bn->beta);
      if (with_buffers) {
        out.emplace_back(prefix + ".bn.running_mean", &conv.bn->running_mean);
        out.emplace_back(prefix + ".bn.running_var", &conv.bn->running_var);
      }
    }
  };
  if (g.stem) add_conv("stem", *g.stem);
  for (std::size_t i = 0; i < g.units.size(); ++i) {
    auto& u = g.units[i];
    const std::string p = "units." + std::to_string(i);
    for (std::size_t j = 0; j < u.convs.size(); ++j) add_conv(p + ".convs." + std::to_string(j), u.convs[j]);
    if (u.projection) add_conv(p + ".projection", *u.projection);
  }
  out.emplace_back("classifier.weight", &g.classifier.weight);
  out.emplace_back("classifier.bias", &g.classifier.bias);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> ModelGraph::named_tensors() {
  return collect_tensors<ModelGraph, Tensor>(*this, true);
}

std::vector<std::pair<std::string, const Tensor*>> ModelGraph::named_tensors() const {
  return collect_tensors<const ModelGraph, const Tensor>(*this, true);
}

std::vector<Tensor*> ModelGraph::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : collect_tensors<ModelGraph, Tensor>(*this, false)) out.push_back(t);
  return out;
}

std::vector<const Tensor*> ModelGraph::parameters() const {
  std::vector<const Tensor*> out;
  for (auto& [name, t] : collect_tensors<const ModelGraph, const Tensor>(*this, false)) out.push_back(t);
  return out;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

std::size_t analytic_parameter_count(const ModelGraph& graph) {
  std::size_t n = 0;
  if (graph.stem) n += graph.stem->parameter_count();
  for (const PrunableUnit& u : graph.units) {
    for (const Conv& c : u.convs) n += c.parameter_count();
    if (u.projection) n += u.projection->parameter_count();
  }
  const std::size_t features = graph.units.empty() ? 0 : graph.units.back().out_channels();
  n += features * graph.num_classes + graph.num_classes;
  return n;
}

ModelSignature ModelGraph::signature() const {
  ModelSignature s;
  for (const PrunableUnit& u : units) s.filters_per_unit.push_back(u.filter_count());
  s.depth = static_cast<int>(units.size());
  return s;
}

std::string ModelGraph::signature_string() const {
  std::ostringstream os;
  os << '[';
  std::size_t next = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (i) os << ", ";
    switch (layout[i]) {
      case SlotKind::pool:
        os << "'M'";
        break;
      case SlotKind::removed:
        os << 0;
        break;
      case SlotKind::unit: {
        const PrunableUnit& u = units[next++];
        if (u.kind == UnitKind::conv_layer) {
          os << u.convs.front().out_channels;
        } else if (u.convs.size() == 2) {
          os << u.convs.front().out_channels;
        } else {
          os << '\'' << u.convs[0].out_channels << '/' << u.convs[1].out_channels << '\'';
        }
        break;
      }
    }
  }
  os << ']';
  return os.str();
}

ModelGraph ModelGraph::zeros_like() const {
  ModelGraph z = *this;
  for (auto& [name, t] : z.named_tensors()) t->fill(0.0);
  return z;
}

void ModelGraph::refresh_indices() {
  for (std::size_t i = 0; i < units.size(); ++i) {
    PrunableUnit& u = units[i];
    u.index = static_cast<int>(i);
    if (u.kind == UnitKind::residual_block) {
      u.removable = u.shortcut == ShortcutKind::identity;
    } else {
      const bool last = i + 1 == units.size();
      u.removable = !last || u.in_channels() == u.out_channels();
    }
  }
}

namespace {

// Keeps the listed output rows and input columns of a conv weight.
Tensor select_channels(const Tensor& w, const std::vector<int>& out_keep, const std::vector<int>& in_keep) {
  const int in = w.dim(1), k = w.dim(2);
  const std::size_t kk = static_cast<std::size_t>(k) * k;
  Tensor r({static_cast<int>(out_keep.size()), static_cast<int>(in_keep.size()), k, k});
  std::size_t o = 0;
  for (int f : out_keep) {
    for (int c : in_keep) {
      const double* src = w.data() + (static_cast<std::size_t>(f) * in + c) * kk;
      std::copy(src, src + kk, r.data() + o);
      o += kk;
    }
  }
  return r;
}

Tensor select_entries(const Tensor& t, const std::vector<int>& keep) {
  Tensor r({static_cast<int>(keep.size())});
  for (std::size_t i = 0; i < keep.size(); ++i) r[i] = t[keep[i]];
  return r;
}

std::vector<int> iota_vec(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void prune_outputs(Conv& conv, const std::vector<int>& keep) {
  conv.weight = select_channels(conv.weight, keep, iota_vec(conv.in_channels));
  if (!conv.bias.empty()) conv.bias = select_entries(conv.bias, keep);
  if (conv.bn) {
    conv.bn->gamma = select_entries(conv.bn->gamma, keep);
    conv.bn->beta = select_entries(conv.bn->beta, keep);
    conv.bn->running_mean = select_entries(conv.bn->running_mean, keep);
    conv.bn->running_var = select_entries(conv.bn->running_var, keep);
  }
  conv.out_channels = static_cast<int>(keep.size());
}

void prune_inputs(Conv& conv, const std::vector<int>& keep) {
  conv.weight = select_channels(conv.weight, iota_vec(conv.out_channels), keep);
  conv.in_channels = static_cast<int>(keep.size());
}

void prune_classifier_inputs(Linear& fc, const std::vector<int>& keep) {
  const int classes = fc.out_features(), in = fc.in_features();
  Tensor w({classes, static_cast<int>(keep.size())});
  for (int c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < keep.size(); ++i) w[c * keep.size() + i] = fc.weight[static_cast<std::size_t>(c) * in + keep[i]];
  fc.weight = std::move(w);
}

}  // namespace

ModelGraph remove_layers(const ModelGraph& graph, const PrunePlan& plan) {
  if (plan.mode != PlanMode::layers) throw Error(ErrorCode::invalid_plan, "remove_layers needs a layer-mode plan");
  if (!plan.removed_filters.empty())
    throw Error(ErrorCode::invalid_plan, "a layer-mode plan must not list filters");
  for (int idx : plan.removed_units) {
    if (idx < 0 || idx >= static_cast<int>(graph.units.size()))
      throw Error(ErrorCode::invalid_plan, "unit " + std::to_string(idx) + " does not exist");
    if (!graph.units[idx].removable)
      throw Error(ErrorCode::invalid_plan, "unit " + std::to_string(idx) + " is not removable");
  }
  if (plan.removed_units.size() >= graph.units.size())
    throw Error(ErrorCode::empty_model, "plan removes every prunable unit");

  ModelGraph out;
  out.family = graph.family;
  out.block = graph.block;
  out.batch_norm = graph.batch_norm;
  out.input = graph.input;
  out.num_classes = graph.num_classes;
  out.stem = graph.stem;
  out.classifier = graph.classifier;
  int next = 0;
  for (SlotKind slot : graph.layout) {
    if (slot != SlotKind::unit) {
      out.layout.push_back(slot);
      continue;
    }
    if (plan.removed_units.count(next)) {
      out.layout.push_back(SlotKind::removed);
    } else {
      out.layout.push_back(SlotKind::unit);
      out.units.push_back(graph.units[next]);
    }
    ++next;
  }

  std::mt19937_64 rng(plan.seed);
  int channels = out.stem ? out.stem->out_channels : out.input[0];
  for (PrunableUnit& u : out.units) {
    if (u.in_channels() != channels) {
      if (u.kind == UnitKind::residual_block)
        throw Error(ErrorCode::invalid_plan, "residual block input no longer matches after removal");
      Conv& c = u.convs.front();
      const double fan_in = static_cast<double>(channels) * c.kernel * c.kernel;
      c.in_channels = channels;
      c.weight = gaussian_tensor({c.out_channels, channels, c.kernel, c.kernel}, std::sqrt(2.0 / fan_in), rng);
      if (c.bn) c.bn->reset_statistics();
    }
    channels = u.out_channels();
  }
  if (out.classifier.in_features() != channels)
    throw Error(ErrorCode::invalid_plan, "plan changes the feature width seen by the classifier");
  out.refresh_indices();
  return out;
}

ModelGraph remove_filters(const ModelGraph& graph, const PrunePlan& plan, int floor) {
  if (plan.mode != PlanMode::filters) throw Error(ErrorCode::invalid_plan, "remove_filters needs a filter-mode plan");
  if (!plan.removed_units.empty()) throw Error(ErrorCode::invalid_plan, "a filter-mode plan must not list units");

  // keep[u][j]: surviving output channels of conv j in unit u.
  std::vector<std::vector<std::vector<int>>> keep(graph.units.size());
  for (std::size_t u = 0; u < graph.units.size(); ++u)
    for (const Conv& c : graph.units[u].convs) keep[u].push_back(iota_vec(c.out_channels));

  for (const auto& [idx, slots] : plan.removed_filters) {
    if (idx < 0 || idx >= static_cast<int>(graph.units.size()))
      throw Error(ErrorCode::invalid_plan, "unit " + std::to_string(idx) + " does not exist");
    const PrunableUnit& unit = graph.units[idx];
    std::vector<std::set<int>> per_conv(unit.convs.size());
    for (int slot : slots) {
      auto [j, f] = unit.locate_filter(slot);
      if (unit.conv_locked(j))
        throw Error(ErrorCode::dependency_violation,
                    "filter " + std::to_string(slot) + " of unit " + std::to_string(idx) +
                        " feeds a residual sum and cannot be pruned");
      per_conv[j].insert(f);
    }
    for (std::size_t j = 0; j < unit.convs.size(); ++j) {
      if (per_conv[j].empty()) continue;
      const int remaining = unit.convs[j].out_channels - static_cast<int>(per_conv[j].size());
      if (remaining < floor)
        throw Error(ErrorCode::floor_violation, "unit " + std::to_string(idx) + " conv " + std::to_string(j) +
                                                    " would keep " + std::to_string(remaining) +
                                                    " filters, floor is " + std::to_string(floor));
      std::vector<int> k;
      for (int f = 0; f < unit.convs[j].out_channels; ++f)
        if (!per_conv[j].count(f)) k.push_back(f);
      keep[idx][j] = std::move(k);
    }
  }

  ModelGraph out = graph;
  for (std::size_t u = 0; u < out.units.size(); ++u) {
    PrunableUnit& unit = out.units[u];
    for (std::size_t j = 0; j < unit.convs.size(); ++j) {
      const std::vector<int>& k = keep[u][j];
      if (static_cast<int>(k.size()) == unit.convs[j].out_channels) continue;
      prune_outputs(unit.convs[j], k);
      if (j + 1 < unit.convs.size()) {
        prune_inputs(unit.convs[j + 1], k);
      } else if (u + 1 < out.units.size()) {
        prune_inputs(out.units[u + 1].convs.front(), k);
      } else {
        prune_classifier_inputs(out.classifier, k);
      }
    }
  }
  out.refresh_indices();
  return out;
}

ModelGraph apply_plan(const ModelGraph& graph, const PrunePlan& plan, int floor) {
  return plan.mode == PlanMode::layers ? remove_layers(graph, plan) : remove_filters(graph, plan, floor);
}

std::string to_string(Family family) { return family == Family::vgg ? "vgg" : "resnet"; }

std::string to_string(UnitKind kind) { return kind == UnitKind::conv_layer ? "conv_layer" : "residual_block"; }

std::string to_string(ShortcutKind kind) {
  switch (kind) {
    case ShortcutKind::none: return "none";
    case ShortcutKind::identity: return "identity";
    case ShortcutKind::projection: return "projection";
  }
  return "none";
}

std::string to_string(PlanMode mode) { return mode == PlanMode::layers ? "layers" : "filters"; }

std::string to_string(PruneBudget::Kind kind) {
  switch (kind) {
    case PruneBudget::Kind::layers_k: return "layers_k";
    case PruneBudget::Kind::filters_n: return "filters_n";
    case PruneBudget::Kind::latency_fraction: return "latency_fraction";
  }
  return "layers_k";
}

PruneBudget::Kind parse_budget_kind(const std::string& s) {
  if (s == "layers_k") return PruneBudget::Kind::layers_k;
  if (s == "filters_n") return PruneBudget::Kind::filters_n;
  if (s == "latency_fraction") return PruneBudget::Kind::latency_fraction;
  throw Error(ErrorCode::config, "unknown budget kind '" + s + "'");
}

}  // namespace layerprune
