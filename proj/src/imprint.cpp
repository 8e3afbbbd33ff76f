#include "layerprune/imprint.hpp"

#include <cmath>

#include "layerprune/error.hpp"
#include "layerprune/executor.hpp"
#include "layerprune/ops.hpp"

namespace layerprune {

int pool_dim(int budget, int channels) {
  if (budget < 1 || channels < 1) throw Error(ErrorCode::config, "embedding budget and channels must be >= 1");
  const long d = std::lround(std::sqrt(static_cast<double>(budget) / channels));
  return static_cast<int>(std::max(1L, d));
}

std::vector<std::vector<double>> embed_batch(const Tensor& feature_maps, int budget) {
  if (feature_maps.rank() != 4) throw Error(ErrorCode::shape_mismatch, "embed expects [B,n,H,W] maps");
  const int d = pool_dim(budget, feature_maps.dim(1));
  const Tensor pooled = ops::adaptive_avg_pool(feature_maps, d);
  const std::size_t per = pooled.stride0();
  std::vector<std::vector<double>> out(feature_maps.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b)
    out[b].assign(pooled.data() + b * per, pooled.data() + (b + 1) * per);
  return out;
}

std::vector<double> embed(const Tensor& feature_map, int budget) {
  Tensor m = feature_map;
  if (m.rank() == 3) m.reshape({1, m.dim(0), m.dim(1), m.dim(2)});
  if (m.rank() != 4 || m.dim(0) != 1) throw Error(ErrorCode::shape_mismatch, "embed expects a single [n,H,W] map");
  return embed_batch(m, budget).front();
}

Imprinter::Imprinter(int length, int classes)
    : length_(length), classes_(classes), sums_(static_cast<std::size_t>(length) * classes, 0.0), counts_(classes, 0) {}

void Imprinter::add(std::span<const double> embedding, int label) {
  if (label < 0 || label >= classes_) throw Error(ErrorCode::config, "label out of range");
  if (static_cast<int>(embedding.size()) != length_) throw Error(ErrorCode::shape_mismatch, "embedding length");
  double* col = sums_.data() + static_cast<std::size_t>(label) * length_;
  for (int i = 0; i < length_; ++i) col[i] += embedding[i];
  ++counts_[label];
}

namespace {

void normalize_inplace(std::span<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  if (s > 0.0) {
    const double inv = 1.0 / std::sqrt(s);
    for (double& x : v) x *= inv;
  }
}

}  // namespace

ImprintWeights Imprinter::weights(bool normalize) const {
  ImprintWeights w;
  w.length = length_;
  w.classes = classes_;
  w.columns = sums_;
  for (int c = 0; c < classes_; ++c) {
    if (counts_[c] == 0) throw Error(ErrorCode::empty_class, "class " + std::to_string(c) + " has no samples");
    std::span<double> col(w.columns.data() + static_cast<std::size_t>(c) * length_, length_);
    for (double& x : col) x /= counts_[c];
    if (normalize) normalize_inplace(col);
  }
  return w;
}

ImprintWeights imprint_weights(std::span<const std::vector<double>> embeddings, std::span<const int> labels,
                               int classes, bool normalize) {
  if (embeddings.size() != labels.size()) throw Error(ErrorCode::config, "embedding/label count mismatch");
  if (embeddings.empty()) throw Error(ErrorCode::empty_class, "class 0 has no samples");
  Imprinter imp(static_cast<int>(embeddings.front().size()), classes);
  for (std::size_t i = 0; i < embeddings.size(); ++i) imp.add(embeddings[i], labels[i]);
  return imp.weights(normalize);
}

int proxy_predict(const ImprintWeights& weights, std::span<const double> embedding) {
  if (static_cast<int>(embedding.size()) != weights.length)
    throw Error(ErrorCode::shape_mismatch, "embedding length does not match proxy");
  int best = 0;
  double best_score = 0.0;
  for (int c = 0; c < weights.classes; ++c) {
    const auto col = weights.column(c);
    double s = 0.0;
    for (int i = 0; i < weights.length; ++i) s += col[i] * embedding[i];
    if (c == 0 || s > best_score) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

std::vector<int> imprint_candidates(const ModelGraph& graph) {
  std::vector<int> out;
  for (const PrunableUnit& u : graph.units)
    if (u.removable || u.index + 1 == static_cast<int>(graph.units.size())) out.push_back(u.index);
  return out;
}

ImprintRanking rank_layers_by_imprint(const ModelGraph& graph, std::span<const Batch> data,
                                      const ImprintOptions& options) {
  if (data.empty()) throw Error(ErrorCode::config, "imprinting needs at least one batch");
  const int classes = graph.num_classes;
  const std::vector<int> candidates = imprint_candidates(graph);
  Executor exec(graph);
  auto capture = [&](int unit) -> const Tensor& {
    return options.preactivation ? exec.unit_preactivation(unit) : exec.unit_output(unit);
  };
  auto maybe_normalize = [&](std::vector<double>& e) {
    if (options.normalized) normalize_inplace(e);
  };

  std::vector<Imprinter> imprinters;
  std::vector<int> dims;
  for (int u : candidates) {
    const PrunableUnit& unit = graph.units[u];
    const int d = pool_dim(options.budget, unit.out_channels());
    dims.push_back(d);
    imprinters.emplace_back(d * d * unit.out_channels(), classes);
  }

  for (const Batch& b : data) {
    exec.forward(b.images, Mode::eval);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      auto embeddings = embed_batch(capture(candidates[k]), options.budget);
      for (std::size_t i = 0; i < embeddings.size(); ++i) {
        maybe_normalize(embeddings[i]);
        imprinters[k].add(embeddings[i], b.labels[i]);
      }
    }
  }

  ImprintRanking result;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    ImprintProxy p;
    p.unit_index = candidates[k];
    p.pool_dim = dims[k];
    p.weights = imprinters[k].weights(options.normalized);
    p.embedding_length = p.weights.length;
    p.class_counts = imprinters[k].class_counts();
    result.proxies.push_back(std::move(p));
  }

  const std::span<const Batch> scoring = options.held_out.empty() ? data : options.held_out;
  std::vector<long> correct(candidates.size(), 0);
  long total = 0;
  for (const Batch& b : scoring) {
    exec.forward(b.images, Mode::eval);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      auto embeddings = embed_batch(capture(candidates[k]), options.budget);
      for (std::size_t i = 0; i < embeddings.size(); ++i) {
        maybe_normalize(embeddings[i]);
        correct[k] += proxy_predict(result.proxies[k].weights, embeddings[i]) == b.labels[i];
      }
    }
    total += static_cast<long>(b.labels.size());
  }

  AccuracyLadder& ladder = result.ladder;
  ladder.candidates = candidates;
  ladder.chance = 1.0 / classes;
  double previous = ladder.chance;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double acc = static_cast<double>(correct[k]) / static_cast<double>(total);
    result.proxies[k].proxy_accuracy = acc;
    ladder.proxy_accuracies.push_back(acc);
    ladder.gains.push_back(acc - previous);
    previous = acc;
  }

  ImportanceTable& t = result.table;
  t.criterion = "imprint";
  for (std::size_t k = 0; k < candidates.size(); ++k) t.layer_scores[candidates[k]] = ladder.gains[k];
  t.pinned.insert(graph.units.back().index);
  t.rank();
  return result;
}

}  // namespace layerprune
