#include "layerprune/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "layerprune/error.hpp"
#include "layerprune/training.hpp"

namespace layerprune {

const std::vector<std::string>& criterion_names() {
  static const std::vector<std::string> names{"weight_norm", "taylor", "bn", "feature_map", "imprint", "ensemble"};
  return names;
}

bool is_filter_criterion(const std::string& c) {
  return c == "weight_norm" || c == "taylor" || c == "bn" || c == "feature_map";
}

void require_criterion(const std::string& c) {
  const auto& names = criterion_names();
  if (std::find(names.begin(), names.end(), c) == names.end())
    throw Error(ErrorCode::config, "unknown criterion '" + c + "'");
}

namespace {

// Restricts a table to a unit subset and re-ranks it.
ImportanceTable restrict_table(const ImportanceTable& t, const std::set<int>& units) {
  ImportanceTable out;
  out.criterion = t.criterion;
  for (const auto& [u, s] : t.layer_scores)
    if (units.count(u)) out.layer_scores[u] = s;
  for (const auto& [u, s] : t.filter_scores)
    if (units.count(u)) out.filter_scores[u] = s;
  for (int u : t.pinned)
    if (units.count(u)) out.pinned.insert(u);
  out.rank();
  return out;
}

}  // namespace

ImportanceTable compute_importance(const ModelGraph& graph, const std::string& criterion,
                                   std::span<const Batch> data, const CriterionOptions& options) {
  require_criterion(criterion);
  if (criterion == "weight_norm") return weight_norm_importance(graph);
  if (criterion == "taylor") return taylor_weight_importance(graph, data, options.num_batches);
  if (criterion == "bn") return bn_scale_importance(graph);
  if (criterion == "feature_map") return feature_map_importance(graph, data, options.num_batches);
  if (criterion == "imprint") return rank_layers_by_imprint(graph, data, options.imprint).table;

  if (options.ensemble_of.size() < 2) throw Error(ErrorCode::config, "ensemble needs at least two criteria");
  std::vector<ImportanceTable> tables;
  for (const std::string& c : options.ensemble_of) {
    if (c == "ensemble") throw Error(ErrorCode::config, "ensemble cannot contain itself");
    tables.push_back(compute_importance(graph, c, data, options));
  }
  // The imprint table only covers its candidates; align the others to it.
  std::set<int> common = tables.front().units();
  for (const ImportanceTable& t : tables) {
    std::set<int> next;
    for (int u : t.units())
      if (common.count(u)) next.insert(u);
    common = std::move(next);
  }
  for (ImportanceTable& t : tables) t = restrict_table(t, common);
  return ensemble_rank(tables);
}

std::vector<int> layer_candidates(const ModelGraph& graph, const ImportanceTable& table) {
  std::vector<int> out;
  for (int u : table.rank_order) {
    if (u < 0 || u >= static_cast<int>(graph.units.size()))
      throw Error(ErrorCode::mismatched_units, "table lists unit " + std::to_string(u) + " not in the graph");
    if (graph.units[u].removable && !table.pinned.count(u)) out.push_back(u);
  }
  return out;
}

namespace {

int max_layer_budget(const ModelGraph& graph, const std::vector<int>& candidates) {
  // At least one unit must survive.
  return std::min<int>(static_cast<int>(candidates.size()), static_cast<int>(graph.units.size()) - 1);
}

}  // namespace

PrunePlan plan_layer_prune(const ModelGraph& graph, const ImportanceTable& table, int k, std::uint64_t seed) {
  if (k < 0) throw Error(ErrorCode::config, "layer budget must be >= 0");
  const std::vector<int> candidates = layer_candidates(graph, table);
  const int limit = max_layer_budget(graph, candidates);
  if (k > limit)
    throw Error(ErrorCode::budget_too_large,
                "asked to remove " + std::to_string(k) + " layers, only " + std::to_string(limit) + " removable");
  PrunePlan plan;
  plan.criterion = table.criterion;
  plan.mode = PlanMode::layers;
  plan.removed_units.insert(candidates.begin(), candidates.begin() + k);
  plan.budget = {PruneBudget::Kind::layers_k, static_cast<double>(k)};
  plan.seed = seed;
  return plan;
}

PrunePlan plan_latency_prune(const ModelGraph& graph, const ImportanceTable& table, double fraction,
                             const LatencyProbe& measure, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::config, "latency fraction must be in (0,1)");
  const std::vector<int> candidates = layer_candidates(graph, table);
  const int limit = max_layer_budget(graph, candidates);
  PrunePlan plan;
  plan.criterion = table.criterion;
  plan.mode = PlanMode::layers;
  plan.budget = {PruneBudget::Kind::latency_fraction, fraction};
  plan.seed = seed;
  const double base = measure(graph);
  for (int i = 0; i < limit; ++i) {
    plan.removed_units.insert(candidates[i]);
    const double now = measure(remove_layers(graph, plan));
    if (1.0 - now / base >= fraction) break;
  }
  return plan;
}

FilterSelection select_filters(const ModelGraph& graph, const ImportanceTable& table, int n, int floor) {
  if (n < 0) throw Error(ErrorCode::config, "filter budget must be >= 0");
  struct Candidate {
    double score;
    int unit;
    int slot;
    int conv;
  };
  std::vector<Candidate> pool;
  std::map<std::pair<int, int>, int> remaining;
  for (const PrunableUnit& u : graph.units) {
    auto it = table.filter_scores.find(u.index);
    if (it == table.filter_scores.end()) continue;
    if (static_cast<int>(it->second.size()) != u.filter_count())
      throw Error(ErrorCode::mismatched_units, "filter scores of unit " + std::to_string(u.index) +
                                                   " do not match its filter count");
    int offset = 0;
    for (std::size_t j = 0; j < u.convs.size(); ++j) {
      const int count = u.convs[j].out_channels;
      if (!u.conv_locked(static_cast<int>(j)) && count > floor) {
        double norm = 0.0;
        for (int f = 0; f < count; ++f) norm += it->second[offset + f] * it->second[offset + f];
        norm = std::sqrt(norm);
        for (int f = 0; f < count; ++f) {
          const double s = it->second[offset + f];
          pool.push_back({norm > 0.0 ? s / norm : 0.0, u.index, offset + f, static_cast<int>(j)});
        }
        remaining[{u.index, static_cast<int>(j)}] = count;
      }
      offset += count;
    }
  }
  FilterSelection sel;
  if (n == 0) return sel;
  if (pool.empty()) throw Error(ErrorCode::exhausted, "no prunable filter remains above the floor");
  std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.score, a.unit, a.slot) < std::tie(b.score, b.unit, b.slot);
  });
  const int take = std::min<int>(n, static_cast<int>(pool.size()));
  for (int i = 0; i < take; ++i) {
    const Candidate& c = pool[i];
    int& left = remaining[{c.unit, c.conv}];
    if (left <= floor) {
      ++sel.skipped;
      sel.log.push_back("skip unit " + std::to_string(c.unit) + " filter " + std::to_string(c.slot) +
                        ": conv " + std::to_string(c.conv) + " at floor " + std::to_string(floor));
      continue;
    }
    --left;
    sel.removed[c.unit].insert(c.slot);
    ++sel.selected;
  }
  return sel;
}

FilterPruneConfig FilterPruneConfig::cifar() { return {}; }

FilterPruneConfig FilterPruneConfig::imagenet() {
  FilterPruneConfig c;
  c.batches_per_step = 30;
  return c;
}

int one_shot_preset(const std::string& architecture) {
  if (architecture.rfind("vgg19", 0) == 0) return 500;
  if (architecture == "resnet56") return 100;
  throw Error(ErrorCode::config, "no one-shot filter preset for '" + architecture + "'");
}

namespace {

// Tracks which baseline filter each live filter came from.
class FilterOrigins {
 public:
  explicit FilterOrigins(const ModelGraph& g) {
    for (const PrunableUnit& u : g.units) {
      std::vector<std::vector<int>> per_conv;
      int offset = 0;
      for (const Conv& c : u.convs) {
        std::vector<int> ids(c.out_channels);
        std::iota(ids.begin(), ids.end(), offset);
        per_conv.push_back(std::move(ids));
        offset += c.out_channels;
      }
      origins_.push_back(std::move(per_conv));
    }
  }

  // Records a removal given in current slots; returns baseline slots.
  std::map<int, std::set<int>> apply(const ModelGraph& g, const std::map<int, std::set<int>>& removed) {
    std::map<int, std::set<int>> base;
    for (const auto& [u, slots] : removed) {
      const PrunableUnit& unit = g.units[u];
      std::vector<std::set<int>> drop(unit.convs.size());
      for (int s : slots) {
        auto [j, f] = unit.locate_filter(s);
        drop[j].insert(f);
        base[u].insert(origins_[u][j][f]);
      }
      for (std::size_t j = 0; j < drop.size(); ++j) {
        std::vector<int> kept;
        for (std::size_t f = 0; f < origins_[u][j].size(); ++f)
          if (!drop[j].count(static_cast<int>(f))) kept.push_back(origins_[u][j][f]);
        origins_[u][j] = std::move(kept);
      }
    }
    return base;
  }

 private:
  std::vector<std::vector<std::vector<int>>> origins_;
};

PrunePlan filter_plan(const std::string& criterion, int total, std::uint64_t seed) {
  PrunePlan plan;
  plan.criterion = criterion;
  plan.mode = PlanMode::filters;
  plan.budget = {PruneBudget::Kind::filters_n, static_cast<double>(total)};
  plan.seed = seed;
  return plan;
}

void require_filter_criterion(const std::string& criterion) {
  require_criterion(criterion);
  if (!is_filter_criterion(criterion))
    throw Error(ErrorCode::criterion_inapplicable, "criterion '" + criterion + "' has no per-filter scores");
}

}  // namespace

FilterPruneResult iterative_filter_prune(const ModelGraph& graph, std::span<const Batch> data,
                                         const FilterPruneConfig& config) {
  require_filter_criterion(config.criterion);
  if (config.filters_per_step < 0 || config.batches_per_step < 1 || config.steps < 0)
    throw Error(ErrorCode::config, "invalid iterative pruning schedule");
  if (config.steps > 0 && data.empty()) throw Error(ErrorCode::config, "iterative pruning needs data");

  FilterPruneResult result{graph, filter_plan(config.criterion, config.filters_per_step * config.steps, config.seed),
                           {}, 0, {}};
  FilterOrigins origins(graph);
  CriterionOptions opts = config.criterion_options;
  opts.num_batches = config.batches_per_step;
  SgdOptimizer opt(config.momentum, config.weight_decay);
  std::size_t cursor = 0;

  for (int step = 0; step < config.steps; ++step) {
    std::vector<Batch> window;
    for (int b = 0; b < config.batches_per_step; ++b) window.push_back(data[(cursor + b) % data.size()]);
    cursor = (cursor + config.batches_per_step) % data.size();

    const ImportanceTable table = compute_importance(result.model, config.criterion, window, opts);
    FilterSelection sel = select_filters(result.model, table, config.filters_per_step, config.floor);
    for (const auto& [u, slots] : origins.apply(result.model, sel.removed))
      result.plan.removed_filters[u].insert(slots.begin(), slots.end());
    PrunePlan step_plan = filter_plan(config.criterion, sel.selected, config.seed);
    step_plan.removed_filters = sel.removed;
    result.model = remove_filters(result.model, step_plan, config.floor);
    result.removed_per_step.push_back(sel.selected);
    result.skipped += sel.skipped;
    for (std::string& line : sel.log) result.log.push_back("step " + std::to_string(step) + ": " + line);

    if (config.learning_rate > 0.0) {
      opt.reset();
      for (const Batch& b : window) train_step(result.model, b, opt, config.learning_rate);
    }
  }
  return result;
}

FilterPruneResult one_shot_filter_prune(const ModelGraph& graph, std::span<const Batch> data,
                                        const std::string& criterion, int total_filters, int floor,
                                        const CriterionOptions& options) {
  require_filter_criterion(criterion);
  FilterPruneResult result{graph, filter_plan(criterion, total_filters, 0), {}, 0, {}};
  if (total_filters == 0) return result;
  const ImportanceTable table = compute_importance(graph, criterion, data, options);
  FilterSelection sel = select_filters(graph, table, total_filters, floor);
  result.plan.removed_filters = sel.removed;
  result.model = remove_filters(graph, result.plan, floor);
  result.removed_per_step.push_back(sel.selected);
  result.skipped = sel.skipped;
  result.log = std::move(sel.log);
  return result;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::config, "spearman needs paired samples");
  if (a.size() < 2) return 1.0;
  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) return saa == sbb ? 1.0 : 0.0;
  return sab / std::sqrt(saa * sbb);
}

double spearman_rho(std::span<const int> order_a, std::span<const int> order_b) {
  if (order_a.size() != order_b.size()) throw Error(ErrorCode::mismatched_units, "orderings differ in length");
  std::map<int, double> pos_b;
  for (std::size_t i = 0; i < order_b.size(); ++i) pos_b[order_b[i]] = static_cast<double>(i);
  std::vector<double> a, b;
  for (std::size_t i = 0; i < order_a.size(); ++i) {
    auto it = pos_b.find(order_a[i]);
    if (it == pos_b.end()) throw Error(ErrorCode::mismatched_units, "orderings cover different items");
    a.push_back(static_cast<double>(i));
    b.push_back(it->second);
  }
  return spearman_rho(std::span<const double>(a), std::span<const double>(b));
}

namespace {

// Imprint rank order mapped to baseline unit indices, pinned units dropped.
std::vector<int> imprint_order(const ModelGraph& g, std::span<const Batch> data, const ImprintOptions& options) {
  const ImportanceTable t = rank_layers_by_imprint(g, data, options).table;
  std::vector<int> out;
  for (int u : layer_candidates(g, t)) out.push_back(g.units[u].origin);
  return out;
}

PrunePlan layer_plan(std::set<int> units, std::uint64_t seed) {
  PrunePlan p;
  p.criterion = "imprint";
  p.mode = PlanMode::layers;
  p.budget = {PruneBudget::Kind::layers_k, static_cast<double>(units.size())};
  p.removed_units = std::move(units);
  p.seed = seed;
  return p;
}

}  // namespace

std::vector<SpearmanRow> spearman_rank_ablation(const ModelGraph& graph, std::span<const Batch> data,
                                                std::span<const Batch> eval, int max_removed,
                                                const ImprintOptions& options, std::uint64_t seed) {
  if (max_removed < 0) throw Error(ErrorCode::config, "max_removed must be >= 0");
  const std::vector<int> base_order = imprint_order(graph, data, options);
  if (max_removed > static_cast<int>(base_order.size()))
    throw Error(ErrorCode::budget_too_large, "not enough removable units for the ablation");

  std::vector<SpearmanRow> rows;
  ModelGraph current = graph;
  std::vector<int> iterative_removed;
  std::vector<int> order = base_order;
  for (int n = 1; n <= max_removed; ++n) {
    // Baseline origins of the unit to drop, looked up in the current graph.
    const int victim = order.front();
    iterative_removed.push_back(victim);
    std::set<int> live;
    for (const PrunableUnit& u : current.units)
      if (u.origin == victim) live.insert(u.index);
    current = remove_layers(current, layer_plan(live, seed));
    order = imprint_order(current, data, options);

    SpearmanRow row;
    row.n_pruned = n;
    row.iterative_removed = iterative_removed;
    row.one_shot_removed.assign(base_order.begin(), base_order.begin() + n);
    // Removability can change under surgery; compare the shared units only.
    const std::set<int> survivors(order.begin(), order.end());
    const std::set<int> base_set(base_order.begin(), base_order.end());
    std::vector<int> base_survivors, new_survivors;
    for (int u : base_order)
      if (survivors.count(u)) base_survivors.push_back(u);
    for (int u : order)
      if (base_set.count(u)) new_survivors.push_back(u);
    row.rho = spearman_rho(std::span<const int>(base_survivors), std::span<const int>(new_survivors));

    std::set<int> one_shot(row.one_shot_removed.begin(), row.one_shot_removed.end());
    const ModelGraph one_shot_model = remove_layers(graph, layer_plan(one_shot, seed));
    if (!eval.empty()) {
      row.one_shot_accuracy = evaluate_accuracy(one_shot_model, eval);
      row.iterative_accuracy = evaluate_accuracy(current, eval);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace layerprune
