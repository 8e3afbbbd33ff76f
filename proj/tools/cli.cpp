#include "layerprune/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "layerprune/architecture.hpp"
#include "layerprune/csv.hpp"
#include "layerprune/error.hpp"
#include "layerprune/experiments.hpp"
#include "layerprune/imprint.hpp"
#include "layerprune/latency.hpp"
#include "layerprune/manifest.hpp"
#include "layerprune/pruner.hpp"
#include "layerprune/report.hpp"
#include "layerprune/results.hpp"
#include "layerprune/training.hpp"

namespace layerprune::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string out = "results";
  std::uint64_t seed = 0;
  std::string device = "cpu";
};

struct ModelOpts {
  std::string model;  // checkpoint path
  std::string arch;   // preset name or descriptor file
  std::string arch_file;
};

struct DataOpts {
  DeskConfig desk;
  int batch_size = 64;
};

struct RecipeOpts {
  std::string preset = "finetune";  // finetune | scratch | long
  int epochs = -1;
  double lr = -1.0;
  std::string decay;  // "81:0.1,121:0.1"
  double momentum = 0.9;
  double weight_decay = -1.0;
  int batch_size = 64;
};

struct Context {
  Common common;
  ModelOpts model;
  DataOpts data;
  RecipeOpts recipe;
  CLI::App* sub = nullptr;
  std::vector<std::string> args;
  RunManifest manifest;
  fs::path out;

  fs::path manifest_path() const { return out / kManifestName; }

  void add_artifacts(const std::vector<fs::path>& paths) {
    for (const fs::path& p : paths) {
      const std::string rel = fs::relative(p, out).generic_string();
      if (std::find(manifest.artifacts.begin(), manifest.artifacts.end(), rel) == manifest.artifacts.end())
        manifest.artifacts.push_back(rel);
    }
    write_manifest(manifest_path(), manifest);
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--out", c.out, "Results directory")->capture_default_str();
  app->add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
  app->add_option("--device", c.device, "Execution device")->envname("LAYERPRUNE_DEVICE")->capture_default_str();
}

void add_model(CLI::App* app, ModelOpts& m) {
  app->add_option("--model", m.model, "Model checkpoint (.ckpt); descriptor defaults to <stem>.arch.json");
  app->add_option("--arch-file", m.arch_file, "Architecture descriptor for --model");
  app->add_option("--arch", m.arch, "Preset name or descriptor file, instantiated with --seed when --model is absent");
}

void add_data(CLI::App* app, DataOpts& d) {
  app->add_option("--data", d.desk.source, "synthetic | cifar10")->capture_default_str();
  app->add_option("--data-path", d.desk.path, "Directory with CIFAR-10 binary batches");
  app->add_option("--train-samples", d.desk.train_samples)->capture_default_str();
  app->add_option("--val-samples", d.desk.val_samples)->capture_default_str();
  app->add_option("--data-fraction", d.desk.fraction)->capture_default_str();
  app->add_option("--data-seed", d.desk.seed)->capture_default_str();
  app->add_option("--batch-size", d.batch_size, "Mini-batch size for scoring passes")->capture_default_str();
}

void add_recipe(CLI::App* app, RecipeOpts& r) {
  app->add_option("--recipe", r.preset, "finetune | scratch | long")->capture_default_str();
  app->add_option("--epochs", r.epochs, "Override the preset epoch count");
  app->add_option("--lr", r.lr, "Override the preset learning rate");
  app->add_option("--decay", r.decay, "Override the decay schedule, e.g. 81:0.1,121:0.1");
  app->add_option("--momentum", r.momentum)->capture_default_str();
  app->add_option("--weight-decay", r.weight_decay, "Override the preset weight decay");
  app->add_option("--train-batch-size", r.batch_size)->capture_default_str();
}

TrainRecipe make_recipe(const RecipeOpts& o, std::uint64_t seed) {
  TrainRecipe r;
  if (o.preset == "finetune") r = TrainRecipe::cifar_finetune();
  else if (o.preset == "scratch") r = TrainRecipe::cifar_scratch();
  else if (o.preset == "long") r = TrainRecipe::long_finetune();
  else throw Error(ErrorCode::config, "unknown recipe '" + o.preset + "'");
  if (o.epochs >= 0) {
    r.epochs = o.epochs;
    // Drop preset decay points the shorter run never reaches.
    std::erase_if(r.decay, [&](const auto& kv) { return kv.first >= r.epochs; });
  }
  if (o.lr >= 0.0) r.learning_rate = o.lr;
  if (o.weight_decay >= 0.0) r.weight_decay = o.weight_decay;
  if (!o.decay.empty()) {
    r.decay.clear();
    std::stringstream ss(o.decay);
    for (std::string item; std::getline(ss, item, ',');) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw Error(ErrorCode::config, "decay entries look like epoch:factor");
      try {
        r.decay[std::stoi(item.substr(0, colon))] = std::stod(item.substr(colon + 1));
      } catch (const std::logic_error&) {
        throw Error(ErrorCode::config, "bad decay entry '" + item + "'");
      }
    }
  }
  r.momentum = o.momentum;
  r.batch_size = o.batch_size;
  r.seed = seed;
  r.validate();
  return r;
}

ModelGraph load(const ModelOpts& m, std::uint64_t seed) {
  if (!m.model.empty()) {
    const fs::path desc = m.arch_file.empty() ? descriptor_path_for(m.model) : fs::path(m.arch_file);
    return load_model(m.model, desc);
  }
  if (m.arch.empty()) throw Error(ErrorCode::config, "give --model or --arch");
  const auto presets = preset_names();
  if (std::find(presets.begin(), presets.end(), m.arch) != presets.end())
    return instantiate(preset_descriptor(m.arch), seed);
  return instantiate(load_descriptor(m.arch), seed);
}

std::string arch_id(const ModelOpts& m) { return !m.arch.empty() ? m.arch : m.model; }

std::vector<fs::path> save(const ModelGraph& g, const fs::path& ckpt) {
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  const fs::path desc = descriptor_path_for(ckpt);
  save_model(g, ckpt, desc);
  return {ckpt, desc};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void log(const std::string& msg) { std::cerr << "[layerprune] " << msg << '\n'; }

// Resolved options of the subcommand, TOML, minus run-location keys.
std::string resolved_config(CLI::App* sub) {
  std::stringstream in(sub->config_to_str(true, false));
  std::string out = "[" + sub->get_name() + "]\n";
  for (std::string line; std::getline(in, line);) {
    const bool local = line.rfind("out=", 0) == 0 || line.rfind("out-model=", 0) == 0 ||
                       line.rfind("figures=", 0) == 0 || line.rfind("config=", 0) == 0 || line.rfind("help=", 0) == 0;
    // Unset options dump as empty strings, which would parse back as values.
    if (local || line.ends_with("=\"\"")) continue;
    out += line + "\n";
  }
  return out;
}

// Path options are stored absolute so a manifest can be rerun from anywhere.
void absolutize(CLI::App* sub, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    CLI::Option* o = sub->get_option_no_throw(n);
    if (!o || o->count() == 0) continue;
    const std::string v = o->as<std::string>();
    if (v.empty()) continue;
    if (std::string(n) == "--arch" && !fs::exists(v)) continue;  // preset name
    o->clear();
    o->add_result(fs::absolute(v).lexically_normal().string());
  }
}

// ---- subcommands ---------------------------------------------------------

struct InitOpts {
  std::string out_model;
};

void cmd_init(Context& ctx, const InitOpts& o) {
  if (ctx.model.arch.empty()) throw Error(ErrorCode::config, "init needs --arch");
  ModelGraph g = load({"", ctx.model.arch, ""}, ctx.common.seed);
  const fs::path ckpt = o.out_model.empty() ? ctx.out / "model.ckpt" : fs::path(o.out_model);
  ctx.add_artifacts(save(g, ckpt));
  std::cout << g.signature_string() << '\n';
}

struct FinetuneOpts {
  std::string out_model;
};

void cmd_finetune(Context& ctx, const FinetuneOpts& o) {
  const ModelGraph g = load(ctx.model, ctx.common.seed);
  const TrainRecipe recipe = make_recipe(ctx.recipe, ctx.common.seed);
  const DeskData data = load_desk_data(ctx.data.desk);
  log("training " + std::to_string(recipe.epochs) + " epochs on " + std::to_string(data.train.size()) + " samples");
  const TrainResult tr = finetune(g, data.train, data.val, recipe);
  const fs::path ckpt = o.out_model.empty() ? ctx.out / "model.ckpt" : fs::path(o.out_model);
  std::vector<fs::path> written = save(tr.model, ckpt);
  csv::Table curve{{"epoch", "learning_rate", "train_loss", "train_accuracy", "val_accuracy"}, {}};
  for (const EpochStats& s : tr.curve)
    curve.rows.push_back({std::to_string(s.epoch), csv::format(s.learning_rate), csv::format(s.train_loss),
                          csv::format(s.train_accuracy), csv::format(s.val_accuracy)});
  csv::write(ctx.out / "curve.csv", curve);
  written.push_back(ctx.out / "curve.csv");
  const double acc = tr.epochs_run() > 0 ? tr.best_val_accuracy : evaluate_accuracy(tr.model, data.val);
  const json summary{{"best_epoch", tr.best_epoch}, {"val_accuracy", acc}, {"epochs", tr.epochs_run()}};
  const auto js = results::write_json(ctx.out / "finetune.json", summary);
  written.insert(written.end(), js.begin(), js.end());
  ctx.add_artifacts(written);
  std::cout << summary.dump() << '\n';
}

void cmd_eval(Context& ctx) {
  const ModelGraph g = load(ctx.model, ctx.common.seed);
  const DeskData data = load_desk_data(ctx.data.desk);
  const json summary{{"train_accuracy", evaluate_accuracy(g, data.train)},
                     {"val_accuracy", evaluate_accuracy(g, data.val)},
                     {"signature", g.signature_string()},
                     {"parameters", g.parameter_count()}};
  ctx.add_artifacts(results::write_json(ctx.out / "eval.json", summary));
  std::cout << summary.dump() << '\n';
}

struct RankOpts {
  std::string criterion = "weight_norm";
  std::string of = "weight_norm,taylor,bn";
  int num_batches = kDefaultCriterionBatches;
  int embedding_budget = kDefaultEmbeddingBudget;
  bool normalized = false;
  bool preactivation = false;
  bool held_out = false;
};

CriterionOptions criterion_options(const RankOpts& o) {
  CriterionOptions c;
  c.num_batches = o.num_batches;
  c.imprint.budget = o.embedding_budget;
  c.imprint.normalized = o.normalized;
  c.imprint.preactivation = o.preactivation;
  c.ensemble_of = split_list(o.of);
  return c;
}

void add_rank_options(CLI::App* app, RankOpts& o) {
  app->add_option("--criterion", o.criterion, "weight_norm | taylor | bn | feature_map | imprint | ensemble")
      ->capture_default_str();
  app->add_option("--of", o.of, "Criteria combined by the ensemble")->capture_default_str();
  app->add_option("--num-batches", o.num_batches, "Mini-batches for gradient criteria")->capture_default_str();
  app->add_option("--embedding-budget", o.embedding_budget, "Imprint embedding length budget")->capture_default_str();
  app->add_flag("--normalized", o.normalized, "L2-normalise imprint embeddings and weights");
  app->add_flag("--preactivation", o.preactivation, "Imprint on pre-activation maps");
  app->add_flag("--held-out", o.held_out, "Score imprint proxies on the validation split");
}

void cmd_rank(Context& ctx, const RankOpts& o) {
  require_criterion(o.criterion);
  const ModelGraph g = load(ctx.model, ctx.common.seed);
  const DeskData data = load_desk_data(ctx.data.desk);
  const std::vector<Batch> batches = make_batches(data.train, ctx.data.batch_size);
  const std::vector<Batch> val = make_batches(data.val, ctx.data.batch_size);
  CriterionOptions opts = criterion_options(o);
  if (o.held_out) opts.imprint.held_out = val;
  std::vector<fs::path> written;

  ImportanceTable table;
  if (o.criterion == "imprint") {
    const ImprintRanking r = rank_layers_by_imprint(g, batches, opts.imprint);
    table = r.table;
    const auto lp = results::write_ladder(ctx.out, r.ladder);
    written.insert(written.end(), lp.begin(), lp.end());
  } else if (o.criterion == "ensemble") {
    // Member tables are written too so the sum of ranks can be checked.
    std::vector<ImportanceTable> members;
    for (const std::string& c : opts.ensemble_of) members.push_back(compute_importance(g, c, batches, opts));
    for (const ImportanceTable& t : members) {
      const auto tp = results::write_table(ctx.out, t);
      written.insert(written.end(), tp.begin(), tp.end());
    }
    table = compute_importance(g, "ensemble", batches, opts);
  } else {
    table = compute_importance(g, o.criterion, batches, opts);
  }
  const auto tp = results::write_table(ctx.out, table);
  written.insert(written.end(), tp.begin(), tp.end());
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [u, s] : table.layer_scores) bars.push_back({std::to_string(u), s});
  const fs::path svg = ctx.out / ("importance_" + table.criterion + ".svg");
  std::ofstream(svg) << report::bars_svg("Layer importance (" + table.criterion + ")", "layer score", bars);
  written.push_back(svg);
  ctx.add_artifacts(written);
  json j{{"criterion", table.criterion}, {"rank_order", table.rank_order}};
  std::cout << j.dump() << '\n';
}

struct PruneOpts {
  RankOpts rank;
  std::string plan;
  int layers = -1;
  int filters = -1;
  double latency_fraction = -1.0;
  int floor = kDefaultFilterFloor;
  int warmup = kDefaultWarmup;
  int iters = kDefaultIters;
  std::string out_model;
};

void cmd_prune(Context& ctx, const PruneOpts& o) {
  const int modes = (!o.plan.empty()) + (o.layers >= 0) + (o.filters >= 0) + (o.latency_fraction >= 0.0);
  if (modes != 1) throw Error(ErrorCode::config, "give exactly one of --plan, --layers, --filters, --latency-fraction");
  const ModelGraph g = load(ctx.model, ctx.common.seed);

  PrunePlan plan;
  if (!o.plan.empty()) {
    std::ifstream in(o.plan);
    if (!in) throw Error(ErrorCode::io, "cannot read " + o.plan);
    plan = plan_from_json(json::parse(in));
  } else {
    require_criterion(o.rank.criterion);
    const DeskData data = load_desk_data(ctx.data.desk);
    const std::vector<Batch> batches = make_batches(data.train, ctx.data.batch_size);
    const CriterionOptions opts = criterion_options(o.rank);
    if (o.filters >= 0) {
      plan = one_shot_filter_prune(g, batches, o.rank.criterion, o.filters, o.floor, opts).plan;
    } else {
      const ImportanceTable table = compute_importance(g, o.rank.criterion, batches, opts);
      if (o.layers >= 0) {
        plan = plan_layer_prune(g, table, o.layers, ctx.common.seed);
      } else {
        MeasureOptions mo;
        mo.warmup = o.warmup;
        mo.iters = o.iters;
        mo.device = ctx.common.device;
        mo.seed = ctx.common.seed;
        plan = plan_latency_prune(
            g, table, o.latency_fraction, [&](const ModelGraph& m) { return measure(m, 1, mo).mean_ms; },
            ctx.common.seed);
      }
    }
    plan.seed = ctx.common.seed;
  }
  const ModelGraph pruned = apply_plan(g, plan, o.floor);
  std::vector<fs::path> written = results::write_json(ctx.out / "plan.json", to_json(plan));
  const fs::path ckpt = o.out_model.empty() ? ctx.out / "pruned.ckpt" : fs::path(o.out_model);
  const auto sp = save(pruned, ckpt);
  written.insert(written.end(), sp.begin(), sp.end());
  std::ofstream(ctx.out / "signature.txt") << pruned.signature_string() << '\n';
  written.push_back(ctx.out / "signature.txt");
  ctx.add_artifacts(written);
  std::cout << pruned.signature_string() << '\n';
}

struct BenchOpts {
  std::vector<int> batch_sizes{1};
  int warmup = kDefaultWarmup;
  int iters = kDefaultIters;
  bool keep_samples = false;
  std::string baseline;  // optional baseline checkpoint for LR%
};

void cmd_bench(Context& ctx, const BenchOpts& o) {
  const ModelGraph g = load(ctx.model, ctx.common.seed);
  MeasureOptions mo;
  mo.warmup = o.warmup;
  mo.iters = o.iters;
  mo.device = ctx.common.device;
  mo.seed = ctx.common.seed;
  mo.keep_samples = o.keep_samples;
  std::vector<LatencyReport> reports;
  for (int b : o.batch_sizes) {
    log("bench batch " + std::to_string(b) + ": " + std::to_string(o.warmup) + " warmup + " +
        std::to_string(o.iters) + " timed");
    reports.push_back(measure(g, b, mo));
  }
  std::vector<fs::path> written = results::write_latency(ctx.out, reports);
  json summary = json::array();
  for (const LatencyReport& r : reports) summary.push_back({{"batch_size", r.batch_size}, {"mean_ms", r.mean_ms}, {"std_ms", r.std_ms}});
  if (!o.baseline.empty()) {
    const ModelGraph base = load({o.baseline, "", ""}, ctx.common.seed);
    json red = json::array();
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const LatencyReduction lr = latency_reduction(measure(base, o.batch_sizes[i], mo), reports[i]);
      red.push_back(to_json(lr));
      summary[i]["lr_percent"] = lr.lr_percent;
    }
    const auto rp = results::write_json(ctx.out / "latency_reduction.json", red);
    written.insert(written.end(), rp.begin(), rp.end());
  }
  ctx.add_artifacts(written);
  std::cout << summary.dump() << '\n';
}

struct SweepOpts {
  int count = 100;
  std::string families = "filter,layer";
  double ratio_min = 0.0;
  double ratio_max = 0.9;
  int retain_min = 1;
  int retain_max = 0;
  std::vector<int> batch_sizes{1};
  int warmup = kDefaultWarmup;
  int iters = kDefaultIters;
  int floor = kDefaultFilterFloor;
  bool train = false;
};

void cmd_sweep(Context& ctx, const SweepOpts& o) {
  const ModelGraph g = load(ctx.model, ctx.common.seed);
  RandomSweepConfig cfg;
  cfg.architecture = arch_id(ctx.model);
  cfg.count = o.count;
  cfg.families.clear();
  for (const std::string& f : split_list(o.families)) cfg.families.push_back(parse_sweep_family(f));
  cfg.ratio_min = o.ratio_min;
  cfg.ratio_max = o.ratio_max;
  cfg.retain_min = o.retain_min;
  cfg.retain_max = o.retain_max;
  cfg.seed = ctx.common.seed;
  cfg.batch_sizes = o.batch_sizes;
  cfg.measure.warmup = o.warmup;
  cfg.measure.iters = o.iters;
  cfg.measure.device = ctx.common.device;
  cfg.measure.seed = ctx.common.seed;
  cfg.floor = o.floor;
  cfg.validate(g);

  // Plans first: they are cheap and fully determine the models.
  json plans = json::array();
  for (SweepFamily f : cfg.families)
    for (int i = 0; i < cfg.count; ++i) {
      const RandomModel rm = random_model(g, cfg, f, i);
      plans.push_back({{"family", to_string(f)}, {"index", i}, {"attempts", rm.attempts}, {"plan", to_json(rm.plan)}});
    }
  ctx.add_artifacts(results::write_json(ctx.out / "sweep_plans.json", plans));

  std::optional<DeskData> data;
  std::optional<SweepTraining> training;
  if (o.train) {
    data = load_desk_data(ctx.data.desk);
    training = SweepTraining{&data->train, &data->val, make_recipe(ctx.recipe, ctx.common.seed)};
  }
  log("sweep: " + std::to_string(cfg.count) + " models per family");
  const SweepResult r = random_sweep(g, cfg, training ? &*training : nullptr);
  ctx.add_artifacts(results::write_sweep(ctx.out, r));
  json summary;
  for (SweepFamily f : cfg.families) {
    std::vector<double> lr;
    for (const SweepEntry& e : r.entries)
      if (e.family == f && e.batch_size == cfg.batch_sizes.front()) lr.push_back(e.lr_percent);
    if (lr.empty()) continue;
    const auto [mn, mx] = std::minmax_element(lr.begin(), lr.end());
    summary[to_string(f)] = {{"min_lr", *mn}, {"max_lr", *mx}, {"median_lr", median(lr)}};
  }
  summary["resamples"] = r.resamples.size();
  std::cout << summary.dump() << '\n';
}

struct AblateOpts {
  std::string kind = "filters";  // filters | spearman | matrix | scratch
  std::string criteria;
  std::string budgets = "1,2,3";
  int filters_per_step = 100;
  int batches_per_step = 10;
  int steps = 10;
  double step_lr = 1e-3;
  int floor = kDefaultFilterFloor;
  int max_removed = 4;
  int layers = 1;
  RankOpts rank;
  bool no_latency = false;
  int warmup = kDefaultWarmup;
  int iters = kDefaultIters;
  std::string scratch_recipe = "scratch";
  int scratch_epochs = -1;
};

void cmd_ablate(Context& ctx, const AblateOpts& o) {
  const ModelGraph g = load(ctx.model, ctx.common.seed);
  const DeskData data = load_desk_data(ctx.data.desk);
  const TrainRecipe recipe = make_recipe(ctx.recipe, ctx.common.seed);
  const CriterionOptions copts = criterion_options(o.rank);

  if (o.kind == "filters") {
    FilterAblationConfig cfg;
    if (!o.criteria.empty()) cfg.criteria = split_list(o.criteria);
    cfg.iterative.filters_per_step = o.filters_per_step;
    cfg.iterative.batches_per_step = o.batches_per_step;
    cfg.iterative.steps = o.steps;
    cfg.iterative.learning_rate = o.step_lr;
    cfg.iterative.floor = o.floor;
    cfg.iterative.criterion_options = copts;
    cfg.recipe = recipe;
    cfg.data_batch_size = ctx.data.batch_size;
    cfg.seed = ctx.common.seed;
    const FilterAblationResult r = filter_ablation(g, data.train, data.val, cfg);
    ctx.add_artifacts(results::write_filter_ablation(ctx.out, r));
    std::cout << json{{"median_iterative", r.median_iterative}, {"median_one_shot", r.median_one_shot}}.dump() << '\n';
  } else if (o.kind == "spearman") {
    const std::vector<Batch> batches = make_batches(data.train, ctx.data.batch_size);
    const std::vector<Batch> val = make_batches(data.val, ctx.data.batch_size);
    const auto rows = spearman_rank_ablation(g, batches, val, o.max_removed, copts.imprint, ctx.common.seed);
    ctx.add_artifacts(results::write_spearman(ctx.out, rows));
    json j = json::array();
    for (const SpearmanRow& r : rows) j.push_back({{"n_pruned", r.n_pruned}, {"rho", r.rho}});
    std::cout << j.dump() << '\n';
  } else if (o.kind == "matrix") {
    MatrixConfig cfg;
    if (!o.criteria.empty()) cfg.criteria = split_list(o.criteria);
    cfg.budgets.clear();
    for (const std::string& b : split_list(o.budgets)) cfg.budgets.push_back(std::stoi(b));
    cfg.recipe = recipe;
    cfg.criterion_options = copts;
    cfg.data_batch_size = ctx.data.batch_size;
    cfg.measure_latency = !o.no_latency;
    cfg.measure.warmup = o.warmup;
    cfg.measure.iters = o.iters;
    cfg.measure.device = ctx.common.device;
    cfg.measure.seed = ctx.common.seed;
    cfg.seed = ctx.common.seed;
    const MatrixResult r = criterion_matrix(g, data.train, data.val, cfg);
    ctx.add_artifacts(results::write_matrix(ctx.out, r));
    std::cout << json{{"baseline_accuracy", r.baseline_accuracy}, {"cells", r.cells.size()}}.dump() << '\n';
  } else if (o.kind == "scratch") {
    const std::vector<Batch> batches = make_batches(data.train, ctx.data.batch_size);
    const ImportanceTable t = compute_importance(g, o.rank.criterion, batches, copts);
    const ModelGraph pruned = remove_layers(g, plan_layer_prune(g, t, o.layers, ctx.common.seed));
    RecipeOpts so = ctx.recipe;
    so.preset = o.scratch_recipe;
    so.epochs = o.scratch_epochs >= 0 ? o.scratch_epochs : recipe.epochs;
    so.lr = -1.0;
    so.weight_decay = -1.0;
    so.decay.clear();
    const ScratchComparison c =
        scratch_vs_finetune(pruned, data.train, data.val, recipe, make_recipe(so, ctx.common.seed), ctx.common.seed);
    const json j{{"signature", c.signature},
                 {"finetuned_accuracy", c.finetuned_accuracy},
                 {"scratch_accuracy", c.scratch_accuracy}};
    ctx.add_artifacts(results::write_json(ctx.out / "scratch.json", j));
    std::cout << j.dump() << '\n';
  } else {
    throw Error(ErrorCode::config, "unknown ablation '" + o.kind + "'");
  }
}

struct ReportOpts {
  std::string results = "results";
  std::string figures;
};

void cmd_report(Context& ctx, const ReportOpts& o) {
  const auto written = report::generate(o.results, o.figures.empty() ? fs::path(ctx.out) / "figures" : fs::path(o.figures));
  ctx.add_artifacts(written);
  for (const fs::path& p : written) std::cout << p.string() << '\n';
}

// ---- rerun ---------------------------------------------------------------

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::io, "cannot read " + p.string());
  return json::parse(in);
}

bool is_accuracy_column(const std::string& name) { return name.find("accuracy") != std::string::npos; }

// Deterministic artifacts must match exactly; accuracies within 0.3 points.
std::vector<std::string> compare_artifacts(const fs::path& a, const fs::path& b, const std::vector<std::string>& files) {
  std::vector<std::string> problems;
  for (const std::string& rel : files) {
    const fs::path pa = a / rel, pb = b / rel;
    const std::string name = fs::path(rel).filename().string();
    if (!fs::exists(pb)) {
      problems.push_back(rel + ": missing in rerun");
      continue;
    }
    if (name == "plan.json" || name == "sweep_plans.json") {
      if (read_json(pa) != read_json(pb)) problems.push_back(rel + ": plans differ");
    } else if (name.rfind("table_", 0) == 0 && fs::path(rel).extension() == ".json") {
      if (read_json(pa).at("rank_order") != read_json(pb).at("rank_order")) problems.push_back(rel + ": rank order differs");
    } else if (fs::path(rel).extension() == ".csv" && name != "latency.csv" && name.rfind("sweep_", 0) != 0 &&
               name != "curve.csv") {
      const csv::Table ta = csv::read(pa), tb = csv::read(pb);
      if (ta.header != tb.header || ta.rows.size() != tb.rows.size()) {
        problems.push_back(rel + ": shape differs");
        continue;
      }
      for (std::size_t c = 0; c < ta.header.size(); ++c) {
        const bool acc = is_accuracy_column(ta.header[c]);
        const bool timing = ta.header[c] == "lr_percent" || ta.header[c].ends_with("_ms");
        if (timing) continue;
        for (std::size_t r = 0; r < ta.rows.size(); ++r) {
          const std::string &x = ta.rows[r][c], &y = tb.rows[r][c];
          if (acc && !x.empty() && !y.empty()) {
            if (std::abs(std::stod(x) - std::stod(y)) * 100.0 > 0.3) problems.push_back(rel + ": " + ta.header[c] + " differs");
          } else if (x != y) {
            problems.push_back(rel + ": " + ta.header[c] + " differs at row " + std::to_string(r));
          }
        }
      }
    } else if (name == "finetune.json" || name == "eval.json" || name == "scratch.json") {
      const json ja = read_json(pa), jb = read_json(pb);
      for (auto it = ja.begin(); it != ja.end(); ++it)
        if (is_accuracy_column(it.key()) &&
            std::abs(it.value().get<double>() - jb.at(it.key()).get<double>()) * 100.0 > 0.3)
          problems.push_back(rel + ": " + it.key() + " differs");
    } else if (name == "sweep_filter.csv" || name == "sweep_layer.csv") {
      const csv::Table ta = csv::read(pa), tb = csv::read(pb);
      const auto si = ta.column("signature"), ri = ta.column("retained");
      bool same = ta.rows.size() == tb.rows.size();
      for (std::size_t r = 0; same && r < ta.rows.size(); ++r)
        same = ta.rows[r][si] == tb.rows[r][si] && ta.rows[r][ri] == tb.rows[r][ri];
      if (!same) problems.push_back(rel + ": sweep models differ");
    }
  }
  return problems;
}

int run_rerun(const std::string& manifest_path, const std::string& out) {
  const RunManifest m = read_manifest(manifest_path);
  if (m.command == "rerun") throw Error(ErrorCode::config, "cannot rerun a rerun manifest");
  const fs::path dir = out;
  fs::create_directories(dir);
  const fs::path cfg = dir / "rerun_config.toml";
  std::ofstream(cfg) << m.config;
  log("rerunning '" + m.command + "' into " + dir.string());
  const int rc = run({"--config", cfg.string(), m.command, "--out", dir.string()});
  if (rc != 0) return rc;
  const auto problems = compare_artifacts(fs::path(manifest_path).parent_path(), dir, m.artifacts);
  const json report{{"reproduced", problems.empty()}, {"problems", problems}};
  results::write_json(dir / "rerun_check.json", report);
  std::cout << report.dump() << '\n';
  return problems.empty() ? 0 : 1;
}

void report_error(std::string_view name, const std::string& message, int code) {
  std::cerr << json{{"error", name}, {"message", message}, {"exit_code", code}}.dump() << '\n';
}

// Moves a --config option in front of the subcommand name.
std::vector<std::string> hoist_config(std::vector<std::string> args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      std::vector<std::string> out{args[i], args[i + 1]};
      for (std::size_t j = 0; j < args.size(); ++j)
        if (j != i && j != i + 1) out.push_back(args[j]);
      return out;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      std::vector<std::string> out{args[i]};
      for (std::size_t j = 0; j < args.size(); ++j)
        if (j != i) out.push_back(args[j]);
      return out;
    }
  }
  return args;
}

}  // namespace

int run(std::vector<std::string> args) {
  args = hoist_config(std::move(args));
  CLI::App app{"Layer and filter pruning toolkit", "layerprune"};
  app.set_version_flag("--version", code_version());
  app.set_config("--config", "", "TOML file with [subcommand] sections; flags override it");
  app.require_subcommand(1);

  Context ctx;
  InitOpts init_o;
  FinetuneOpts ft_o;
  RankOpts rank_o;
  PruneOpts prune_o;
  BenchOpts bench_o;
  SweepOpts sweep_o;
  AblateOpts ablate_o;
  ReportOpts report_o;
  std::string rerun_manifest, rerun_out;

  auto* init = app.add_subcommand("init", "Create a freshly initialised model from a preset or descriptor");
  add_common(init, ctx.common);
  init->add_option("--arch", ctx.model.arch, "Preset name or descriptor file")->required();
  init->add_option("--out-model", init_o.out_model, "Checkpoint path (default <out>/model.ckpt)");

  auto* ft = app.add_subcommand("finetune", "Train a model under a recipe");
  add_common(ft, ctx.common);
  add_model(ft, ctx.model);
  add_data(ft, ctx.data);
  add_recipe(ft, ctx.recipe);
  ft->add_option("--out-model", ft_o.out_model, "Checkpoint path (default <out>/model.ckpt)");

  auto* ev = app.add_subcommand("eval", "Classifier accuracy on the train and validation splits");
  add_common(ev, ctx.common);
  add_model(ev, ctx.model);
  add_data(ev, ctx.data);

  auto* rank = app.add_subcommand("rank", "Score and rank prunable units with one criterion");
  add_common(rank, ctx.common);
  add_model(rank, ctx.model);
  add_data(rank, ctx.data);
  add_rank_options(rank, rank_o);

  auto* prune = app.add_subcommand("prune", "Remove layers or filters");
  add_common(prune, ctx.common);
  add_model(prune, ctx.model);
  add_data(prune, ctx.data);
  add_rank_options(prune, prune_o.rank);
  prune->add_option("--plan", prune_o.plan, "Apply a saved plan JSON");
  prune->add_option("--layers", prune_o.layers, "Remove this many layers/blocks");
  prune->add_option("--filters", prune_o.filters, "Remove this many filters in one shot");
  prune->add_option("--latency-fraction", prune_o.latency_fraction, "Remove layers until latency drops by this fraction");
  prune->add_option("--floor", prune_o.floor, "Minimum filters per conv")->capture_default_str();
  prune->add_option("--warmup", prune_o.warmup)->capture_default_str();
  prune->add_option("--iters", prune_o.iters)->capture_default_str();
  prune->add_option("--out-model", prune_o.out_model, "Checkpoint path (default <out>/pruned.ckpt)");

  auto* bench = app.add_subcommand("bench", "Measure inference latency");
  add_common(bench, ctx.common);
  add_model(bench, ctx.model);
  bench->add_option("--batch-sizes", bench_o.batch_sizes)->delimiter(',')->capture_default_str();
  bench->add_option("--warmup", bench_o.warmup)->capture_default_str();
  bench->add_option("--iters", bench_o.iters)->capture_default_str();
  bench->add_flag("--keep-samples", bench_o.keep_samples, "Store per-iteration timings");
  bench->add_option("--baseline", bench_o.baseline, "Baseline checkpoint; adds latency reduction");

  auto* sweep = app.add_subcommand("sweep", "Random filter- and layer-pruned models with latency");
  add_common(sweep, ctx.common);
  add_model(sweep, ctx.model);
  add_data(sweep, ctx.data);
  add_recipe(sweep, ctx.recipe);
  sweep->add_option("--count", sweep_o.count, "Models per family")->capture_default_str();
  sweep->add_option("--families", sweep_o.families)->capture_default_str();
  sweep->add_option("--ratio-min", sweep_o.ratio_min)->capture_default_str();
  sweep->add_option("--ratio-max", sweep_o.ratio_max)->capture_default_str();
  sweep->add_option("--retain-min", sweep_o.retain_min)->capture_default_str();
  sweep->add_option("--retain-max", sweep_o.retain_max, "0 means every unit")->capture_default_str();
  sweep->add_option("--batch-sizes", sweep_o.batch_sizes)->delimiter(',')->capture_default_str();
  sweep->add_option("--warmup", sweep_o.warmup)->capture_default_str();
  sweep->add_option("--iters", sweep_o.iters)->capture_default_str();
  sweep->add_option("--floor", sweep_o.floor)->capture_default_str();
  sweep->add_flag("--train", sweep_o.train, "Train every model and record accuracy");

  auto* ablate = app.add_subcommand("ablate", "Pruning ablations: filters, spearman, matrix, scratch");
  add_common(ablate, ctx.common);
  add_model(ablate, ctx.model);
  add_data(ablate, ctx.data);
  add_recipe(ablate, ctx.recipe);
  add_rank_options(ablate, ablate_o.rank);
  ablate->add_option("--kind", ablate_o.kind)->capture_default_str();
  ablate->add_option("--criteria", ablate_o.criteria, "Comma-separated criteria");
  ablate->add_option("--budgets", ablate_o.budgets, "Layer budgets for the matrix")->capture_default_str();
  ablate->add_option("--filters-per-step", ablate_o.filters_per_step)->capture_default_str();
  ablate->add_option("--batches-per-step", ablate_o.batches_per_step)->capture_default_str();
  ablate->add_option("--steps", ablate_o.steps)->capture_default_str();
  ablate->add_option("--step-lr", ablate_o.step_lr, "Learning rate between pruning steps")->capture_default_str();
  ablate->add_option("--floor", ablate_o.floor)->capture_default_str();
  ablate->add_option("--max-removed", ablate_o.max_removed)->capture_default_str();
  ablate->add_option("--layers", ablate_o.layers, "Layers removed for the scratch comparison")->capture_default_str();
  ablate->add_flag("--no-latency", ablate_o.no_latency, "Skip latency in the matrix");
  ablate->add_option("--warmup", ablate_o.warmup)->capture_default_str();
  ablate->add_option("--iters", ablate_o.iters)->capture_default_str();
  ablate->add_option("--scratch-recipe", ablate_o.scratch_recipe)->capture_default_str();
  ablate->add_option("--scratch-epochs", ablate_o.scratch_epochs);

  auto* rep = app.add_subcommand("report", "Render figures and tables from result CSVs");
  add_common(rep, ctx.common);
  rep->add_option("--results", report_o.results, "Results directory to read")->capture_default_str();
  rep->add_option("--figures", report_o.figures, "Output directory (default <out>/figures)");

  auto* rerun = app.add_subcommand("rerun", "Re-execute a run manifest and compare its artifacts");
  rerun->add_option("--manifest", rerun_manifest)->required();
  rerun->add_option("--out", rerun_out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(error_name(ErrorCode::config), e.what(), 2);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == rerun) return run_rerun(rerun_manifest, rerun_out);
    if (sub == rep && !fs::is_directory(report_o.results))
      throw Error(ErrorCode::no_results, "results directory '" + report_o.results + "' does not exist");

    absolutize(sub, {"--model", "--arch-file", "--arch", "--data-path", "--plan", "--baseline", "--results"});
    ctx.sub = sub;
    ctx.args = args;
    ctx.out = ctx.common.out;
    ctx.manifest.command = sub->get_name();
    ctx.manifest.argv = args;
    ctx.manifest.config = resolved_config(sub);
    ctx.manifest.seed = ctx.common.seed;
    ctx.manifest.version = code_version();
    ctx.manifest.device = ctx.common.device;
    ctx.manifest.device_fingerprint = device_fingerprint();
    ctx.manifest.started_at = utc_timestamp();
    fs::create_directories(ctx.out);
    write_manifest(ctx.manifest_path(), ctx.manifest);
  } catch (const Error& e) {
    report_error(error_name(e.code()), e.what(), exit_code(e.code()));
    return exit_code(e.code());
  }

  auto finish = [&](const std::string& status, const std::string& error) {
    ctx.manifest.status = status;
    ctx.manifest.error = error;
    ctx.manifest.finished_at = utc_timestamp();
    write_manifest(ctx.manifest_path(), ctx.manifest);
  };
  try {
    require_device(ctx.common.device);
    if (sub == init) cmd_init(ctx, init_o);
    else if (sub == ft) cmd_finetune(ctx, ft_o);
    else if (sub == ev) cmd_eval(ctx);
    else if (sub == rank) cmd_rank(ctx, rank_o);
    else if (sub == prune) cmd_prune(ctx, prune_o);
    else if (sub == bench) cmd_bench(ctx, bench_o);
    else if (sub == sweep) cmd_sweep(ctx, sweep_o);
    else if (sub == ablate) cmd_ablate(ctx, ablate_o);
    else if (sub == rep) cmd_report(ctx, report_o);
    finish("complete", "");
    return 0;
  } catch (const Error& e) {
    finish("failed", e.what());
    report_error(error_name(e.code()), e.what(), exit_code(e.code()));
    return exit_code(e.code());
  } catch (const json::exception& e) {
    finish("failed", e.what());
    report_error(error_name(ErrorCode::config), e.what(), 2);
    return 2;
  } catch (const std::exception& e) {
    finish("failed", e.what());
    report_error("Internal", e.what(), 1);
    return 1;
  }
}

}  // namespace layerprune::cli
