#include "layerprune/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "layerprune/error.hpp"
#include "layerprune/executor.hpp"
#include "layerprune/ops.hpp"

namespace layerprune {

void ImportanceTable::rank() {
  rank_order.clear();
  for (const auto& [u, s] : layer_scores) rank_order.push_back(u);
  std::stable_sort(rank_order.begin(), rank_order.end(), [&](int a, int b) {
    const double sa = layer_scores.at(a), sb = layer_scores.at(b);
    if (sa != sb) return sa < sb;
    return a < b;
  });
}

std::set<int> ImportanceTable::units() const {
  std::set<int> s;
  for (const auto& [u, v] : layer_scores) s.insert(u);
  return s;
}

ImportanceTable table_from_filter_scores(std::string criterion, std::map<int, std::vector<double>> filter_scores) {
  ImportanceTable t;
  t.criterion = std::move(criterion);
  for (const auto& [u, scores] : filter_scores) {
    double sum = 0.0;
    for (double s : scores) sum += s;
    t.layer_scores[u] = scores.empty() ? 0.0 : sum / static_cast<double>(scores.size());
  }
  t.filter_scores = std::move(filter_scores);
  t.rank();
  return t;
}

namespace {

void require_units(const ModelGraph& graph) {
  if (graph.units.empty()) throw Error(ErrorCode::empty_model, "graph has no prunable units");
}

std::span<const Batch> take_batches(std::span<const Batch> data, int num_batches) {
  if (num_batches < 1) throw Error(ErrorCode::config, "num_batches must be >= 1");
  if (data.empty()) throw Error(ErrorCode::config, "criterion needs at least one batch of data");
  return data.first(std::min<std::size_t>(data.size(), static_cast<std::size_t>(num_batches)));
}

double filter_norm(const Tensor& w, int filter) {
  const std::size_t per = w.stride0();
  const double* p = w.data() + static_cast<std::size_t>(filter) * per;
  double s = 0.0;
  for (std::size_t i = 0; i < per; ++i) s += p[i] * p[i];
  return std::sqrt(s);
}

}  // namespace

ImportanceTable weight_norm_importance(const ModelGraph& graph) {
  require_units(graph);
  std::map<int, std::vector<double>> scores;
  for (const PrunableUnit& u : graph.units) {
    auto& s = scores[u.index];
    for (const Conv& c : u.convs)
      for (int f = 0; f < c.out_channels; ++f) s.push_back(filter_norm(c.weight, f));
  }
  return table_from_filter_scores("weight_norm", std::move(scores));
}

ImportanceTable taylor_weight_importance(const ModelGraph& graph, std::span<const Batch> data, int num_batches) {
  require_units(graph);
  const auto batches = take_batches(data, num_batches);
  ModelGraph grads = graph.zeros_like();
  Executor exec(graph);
  for (const Batch& b : batches) {
    Tensor logits = exec.forward(b.images, Mode::eval);
    exec.backward(ops::softmax_cross_entropy(logits, b.labels).grad, grads);
  }
  const double inv = 1.0 / static_cast<double>(batches.size());
  std::map<int, std::vector<double>> scores;
  for (const PrunableUnit& u : graph.units) {
    auto& s = scores[u.index];
    for (std::size_t j = 0; j < u.convs.size(); ++j) {
      const Tensor& w = u.convs[j].weight;
      const Tensor& g = grads.units[u.index].convs[j].weight;
      if (g.shape() != w.shape())
        throw Error(ErrorCode::no_gradients, "no gradient for unit " + std::to_string(u.index));
      const std::size_t per = w.stride0();
      for (int f = 0; f < u.convs[j].out_channels; ++f) {
        double acc = 0.0;
        for (std::size_t i = f * per; i < (f + 1) * per; ++i) {
          const double gw = g[i] * inv * w[i];
          acc += gw * gw;
        }
        s.push_back(std::sqrt(acc));
      }
    }
  }
  return table_from_filter_scores("taylor", std::move(scores));
}

ImportanceTable bn_scale_importance(const ModelGraph& graph) {
  require_units(graph);
  std::map<int, std::vector<double>> scores;
  for (const PrunableUnit& u : graph.units) {
    if (!u.has_bn())
      throw Error(ErrorCode::criterion_inapplicable,
                  "BN-scale criterion needs batch norm; unit " + std::to_string(u.index) + " has none");
    auto& s = scores[u.index];
    for (double g : u.bn_scales()) s.push_back(g * g);
  }
  return table_from_filter_scores("bn", std::move(scores));
}

ImportanceTable feature_map_importance(const ModelGraph& graph, std::span<const Batch> data, int num_batches) {
  require_units(graph);
  const auto batches = take_batches(data, num_batches);
  std::map<int, std::vector<double>> sums;
  for (const PrunableUnit& u : graph.units) sums[u.index].assign(u.filter_count(), 0.0);
  long samples = 0;
  Executor exec(graph);
  for (const Batch& b : batches) {
    Tensor logits = exec.forward(b.images, Mode::eval);
    ops::LossResult loss = ops::softmax_cross_entropy(logits, b.labels);
    // Per-sample loss gradients: undo the batch-mean scaling.
    const double batch = static_cast<double>(b.labels.size());
    for (double& g : loss.grad.values()) g *= batch;
    ModelGraph scratch = graph.zeros_like();
    exec.backward(loss.grad, scratch);
    for (const PrunableUnit& u : graph.units) {
      auto& s = sums[u.index];
      int slot = 0;
      for (std::size_t j = 0; j < u.convs.size(); ++j) {
        const Tensor& a = exec.conv_feature(u.index, static_cast<int>(j));
        const Tensor& g = exec.conv_feature_grad(u.index, static_cast<int>(j));
        const int n = a.dim(0), c = a.dim(1);
        const std::size_t area = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
        for (int ch = 0; ch < c; ++ch) {
          for (int k = 0; k < n; ++k) {
            const std::size_t off = (static_cast<std::size_t>(k) * c + ch) * area;
            double acc = 0.0;
            for (std::size_t i = 0; i < area; ++i) {
              const double v = a[off + i] * g[off + i];
              acc += v * v;
            }
            s[slot + ch] += std::sqrt(acc) / static_cast<double>(area);
          }
        }
        slot += c;
      }
    }
    samples += static_cast<long>(b.labels.size());
  }
  for (auto& [u, s] : sums)
    for (double& v : s) v /= static_cast<double>(samples);
  return table_from_filter_scores("feature_map", std::move(sums));
}

ImportanceTable ensemble_rank(std::span<const ImportanceTable> tables) {
  if (tables.size() < 2) throw Error(ErrorCode::config, "ensemble needs at least two tables");
  const std::set<int> units = tables.front().units();
  ImportanceTable out;
  out.criterion = "ensemble";
  for (int u : units) out.layer_scores[u] = 0.0;
  for (const ImportanceTable& t : tables) {
    if (t.units() != units)
      throw Error(ErrorCode::mismatched_units, "table '" + t.criterion + "' covers a different unit set");
    for (std::size_t pos = 0; pos < t.rank_order.size(); ++pos)
      out.layer_scores[t.rank_order[pos]] += static_cast<double>(pos);
    out.pinned.insert(t.pinned.begin(), t.pinned.end());
  }
  out.rank();
  return out;
}

}  // namespace layerprune
