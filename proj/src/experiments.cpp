#include "layerprune/experiments.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "layerprune/architecture.hpp"
#include "layerprune/error.hpp"

namespace layerprune {

DeskData load_desk_data(const DeskConfig& config) {
  if (config.train_samples < 1 || config.val_samples < 1) throw Error(ErrorCode::config, "desk splits must be non-empty");
  if (config.source == "synthetic") {
    SyntheticSpec spec;
    spec.samples = config.train_samples + config.val_samples;
    spec.num_classes = config.num_classes;
    spec.seed = config.seed;
    const Dataset all = make_synthetic(spec);
    return {all.slice(0, config.train_samples), all.slice(config.train_samples, all.size())};
  }
  if (config.source == "cifar10") {
    if (!(config.fraction > 0.0 && config.fraction <= 1.0)) throw Error(ErrorCode::config, "fraction must be in (0,1]");
    std::vector<std::filesystem::path> train_files;
    for (int i = 1; i <= 5; ++i) train_files.push_back(config.path / ("data_batch_" + std::to_string(i) + ".bin"));
    const int cap = std::min(config.train_samples, static_cast<int>(50000 * config.fraction));
    return {load_cifar10_binary(train_files, cap), load_cifar10_binary({config.path / "test_batch.bin"}, config.val_samples)};
  }
  throw Error(ErrorCode::config, "unknown dataset source '" + config.source + "'");
}

std::string to_string(SweepFamily f) { return f == SweepFamily::filter ? "filter" : "layer"; }

SweepFamily parse_sweep_family(const std::string& s) {
  if (s == "filter") return SweepFamily::filter;
  if (s == "layer") return SweepFamily::layer;
  throw Error(ErrorCode::config, "unknown sweep family '" + s + "'");
}

void RandomSweepConfig::validate(const ModelGraph& baseline) const {
  const int L = static_cast<int>(baseline.units.size());
  const int hi = retain_max == 0 ? L : retain_max;
  if (count < 0) throw Error(ErrorCode::config, "count must be >= 0");
  if (!(0.0 <= ratio_min && ratio_min <= ratio_max && ratio_max <= 0.9))
    throw Error(ErrorCode::config, "filter ratio bounds must satisfy 0 <= min <= max <= 0.9");
  if (!(1 <= retain_min && retain_min <= hi && hi <= L))
    throw Error(ErrorCode::config, "retention bounds must satisfy 1 <= min <= max <= " + std::to_string(L));
  if (batch_sizes.empty()) throw Error(ErrorCode::config, "at least one batch size is needed");
  for (int b : batch_sizes)
    if (b < 1) throw Error(ErrorCode::config, "batch sizes must be >= 1");
  if (max_attempts < 1) throw Error(ErrorCode::config, "max_attempts must be >= 1");
}

namespace {

std::mt19937_64 model_rng(std::uint64_t seed, SweepFamily family, int index, int attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(family), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(attempt)};
  return std::mt19937_64(seq);
}

PrunePlan draw_filter_plan(const ModelGraph& g, const RandomSweepConfig& cfg, std::mt19937_64& rng) {
  PrunePlan plan;
  plan.criterion = "random";
  plan.mode = PlanMode::filters;
  std::uniform_real_distribution<double> ratio(cfg.ratio_min, cfg.ratio_max);
  int total = 0;
  for (const PrunableUnit& u : g.units) {
    int offset = 0;
    for (std::size_t j = 0; j < u.convs.size(); ++j) {
      const int F = u.convs[j].out_channels;
      if (!u.conv_locked(static_cast<int>(j))) {
        const double p = ratio(rng);
        const int k = std::max(0, std::min(static_cast<int>(p * F), F - cfg.floor));
        std::vector<int> ids(F);
        std::iota(ids.begin(), ids.end(), 0);
        std::shuffle(ids.begin(), ids.end(), rng);
        for (int i = 0; i < k; ++i) plan.removed_filters[u.index].insert(offset + ids[i]);
        total += k;
      }
      offset += F;
    }
  }
  plan.budget = {PruneBudget::Kind::filters_n, static_cast<double>(total)};
  return plan;
}

PrunePlan draw_layer_plan(const ModelGraph& g, const RandomSweepConfig& cfg, std::mt19937_64& rng,
                          std::string& cause) {
  const int L = static_cast<int>(g.units.size());
  const int hi = cfg.retain_max == 0 ? L : cfg.retain_max;
  const int M = std::uniform_int_distribution<int>(cfg.retain_min, hi)(rng);
  std::vector<int> removable;
  for (const PrunableUnit& u : g.units)
    if (u.removable) removable.push_back(u.index);
  const int fixed = L - static_cast<int>(removable.size());
  PrunePlan plan;
  plan.criterion = "random";
  plan.mode = PlanMode::layers;
  if (M < fixed) {
    cause = "retention " + std::to_string(M) + " below the " + std::to_string(fixed) + " non-removable units";
    return plan;
  }
  std::shuffle(removable.begin(), removable.end(), rng);
  for (std::size_t i = static_cast<std::size_t>(M - fixed); i < removable.size(); ++i)
    plan.removed_units.insert(removable[i]);
  plan.budget = {PruneBudget::Kind::layers_k, static_cast<double>(plan.removed_units.size())};
  return plan;
}

}  // namespace

RandomModel random_model(const ModelGraph& baseline, const RandomSweepConfig& config, SweepFamily family,
                         int index) {
  RandomModel m;
  m.family = family;
  m.index = index;
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    auto rng = model_rng(config.seed, family, index, attempt);
    std::string cause;
    PrunePlan plan = family == SweepFamily::filter ? draw_filter_plan(baseline, config, rng)
                                                   : draw_layer_plan(baseline, config, rng, cause);
    plan.seed = config.seed;
    if (cause.empty()) {
      try {
        (void)apply_plan(baseline, plan, config.floor);
      } catch (const Error& e) {
        cause = std::string(error_name(e.code())) + ": " + e.what();
      }
    }
    if (cause.empty()) {
      m.attempts = attempt + 1;
      m.plan = std::move(plan);
      return m;
    }
    m.resample_causes.push_back(std::move(cause));
  }
  throw Error(ErrorCode::exhausted, "no valid " + to_string(family) + " model after " +
                                        std::to_string(config.max_attempts) + " attempts");
}

SweepResult random_sweep(const ModelGraph& baseline, const RandomSweepConfig& config, const SweepTraining* training) {
  config.validate(baseline);
  SweepResult result;
  for (int b : config.batch_sizes) result.baseline.push_back(measure(baseline, b, config.measure));

  for (SweepFamily family : config.families) {
    for (int i = 0; i < config.count; ++i) {
      const RandomModel rm = random_model(baseline, config, family, i);
      for (std::size_t a = 0; a < rm.resample_causes.size(); ++a)
        result.resamples.push_back({family, i, static_cast<int>(a), rm.resample_causes[a]});
      ModelGraph model = apply_plan(baseline, rm.plan, config.floor);

      std::optional<double> accuracy;
      if (training) {
        TrainResult tr = finetune(model, *training->train, *training->val, training->recipe);
        accuracy = tr.best_val_accuracy;
        model = std::move(tr.model);
      }
      std::vector<int> retained;
      for (const PrunableUnit& u : model.units) retained.push_back(u.origin);

      for (std::size_t k = 0; k < config.batch_sizes.size(); ++k) {
        const LatencyReport r = measure(model, config.batch_sizes[k], config.measure);
        SweepEntry e;
        e.family = family;
        e.index = i;
        e.attempts = rm.attempts;
        e.signature = model.signature_string();
        if (family == SweepFamily::layer) e.retained = retained;
        e.batch_size = config.batch_sizes[k];
        e.mean_ms = r.mean_ms;
        e.std_ms = r.std_ms;
        e.lr_percent = latency_reduction(result.baseline[k], r).lr_percent;
        e.accuracy = accuracy;
        result.entries.push_back(std::move(e));
      }
    }
  }
  return result;
}

MatrixResult criterion_matrix(const ModelGraph& graph, const Dataset& train, const Dataset& val,
                              const MatrixConfig& config) {
  MatrixResult result;
  result.baseline_accuracy = evaluate_accuracy(graph, val);
  if (config.measure_latency) result.baseline_latency = measure(graph, 1, config.measure);
  const std::vector<Batch> data = make_batches(train, config.data_batch_size);

  for (const std::string& criterion : config.criteria) {
    std::optional<ImportanceTable> table;
    std::string rank_error;
    try {
      table = compute_importance(graph, criterion, data, config.criterion_options);
    } catch (const Error& e) {
      rank_error = std::string(error_name(e.code())) + ": " + e.what();
    }
    for (int k : config.budgets) {
      MatrixCell cell;
      cell.criterion = criterion;
      cell.budget = k;
      if (!table) {
        cell.error = rank_error;
        result.cells.push_back(std::move(cell));
        continue;
      }
      try {
        const PrunePlan plan = plan_layer_prune(graph, *table, k, config.seed);
        cell.removed.assign(plan.removed_units.begin(), plan.removed_units.end());
        TrainRecipe recipe = config.recipe;
        recipe.seed = config.seed;
        const TrainResult tr = finetune(remove_layers(graph, plan), train, val, recipe);
        cell.accuracy = tr.epochs_run() > 0 ? tr.best_val_accuracy : evaluate_accuracy(tr.model, val);
        cell.signature = tr.model.signature_string();
        if (config.measure_latency)
          cell.lr_percent =
              latency_reduction(*result.baseline_latency, measure(tr.model, 1, config.measure)).lr_percent;
      } catch (const Error& e) {
        cell.error = std::string(error_name(e.code())) + ": " + e.what();
      }
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::no_results, "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

double tuned_accuracy(const ModelGraph& model, const Dataset& train, const Dataset& val, const TrainRecipe& recipe) {
  const TrainResult tr = finetune(model, train, val, recipe);
  return tr.epochs_run() > 0 ? tr.best_val_accuracy : evaluate_accuracy(tr.model, val);
}

}  // namespace

FilterAblationResult filter_ablation(const ModelGraph& graph, const Dataset& train, const Dataset& val,
                                     const FilterAblationConfig& config) {
  FilterAblationResult result;
  const std::vector<Batch> data = make_batches(train, config.data_batch_size);
  std::vector<double> iter_acc, once_acc;
  for (const std::string& criterion : config.criteria) {
    FilterPruneConfig ic = config.iterative;
    ic.criterion = criterion;
    ic.seed = config.seed;
    const FilterPruneResult it = iterative_filter_prune(graph, data, ic);
    const int removed = std::accumulate(it.removed_per_step.begin(), it.removed_per_step.end(), 0);
    CriterionOptions opts = ic.criterion_options;
    opts.num_batches = ic.batches_per_step;
    const FilterPruneResult once = one_shot_filter_prune(graph, data, criterion, removed, ic.floor, opts);

    TrainRecipe recipe = config.recipe;
    recipe.seed = config.seed;
    FilterAblationRow row;
    row.criterion = criterion;
    row.iterative_removed = removed;
    row.one_shot_removed = once.removed_per_step.empty() ? 0 : once.removed_per_step.front();
    row.iterative_signature = it.model.signature_string();
    row.one_shot_signature = once.model.signature_string();
    row.iterative_accuracy = tuned_accuracy(it.model, train, val, recipe);
    row.one_shot_accuracy = tuned_accuracy(once.model, train, val, recipe);
    iter_acc.push_back(row.iterative_accuracy);
    once_acc.push_back(row.one_shot_accuracy);
    result.rows.push_back(std::move(row));
  }
  result.median_iterative = median(iter_acc);
  result.median_one_shot = median(once_acc);
  return result;
}

ScratchComparison scratch_vs_finetune(const ModelGraph& pruned, const Dataset& train, const Dataset& val,
                                      const TrainRecipe& finetune_recipe, const TrainRecipe& scratch_recipe,
                                      std::uint64_t init_seed) {
  ScratchComparison c;
  c.signature = pruned.signature_string();
  c.finetuned_accuracy = tuned_accuracy(pruned, train, val, finetune_recipe);
  c.scratch_accuracy = tuned_accuracy(instantiate(describe(pruned), init_seed), train, val, scratch_recipe);
  return c;
}

}  // namespace layerprune
