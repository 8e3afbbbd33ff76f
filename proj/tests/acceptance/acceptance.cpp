// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "layerprune/cli.hpp"
#include "layerprune/criteria.hpp"
#include "layerprune/error.hpp"
#include "layerprune/experiments.hpp"
#include "layerprune/imprint.hpp"
#include "layerprune/latency.hpp"
#include "layerprune/model_graph.hpp"
#include "layerprune/pruner.hpp"
#include "layerprune/training.hpp"
#include "nlohmann/json.hpp"

using namespace testing_util;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string first_failure;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) first_failure = what;
    pass = pass && ok;
  }
};

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// Desk-scale benchmark shared by the training-based checks.
const lp::DeskData& desk() {
  static const lp::DeskData d = lp::load_desk_data(lp::DeskConfig{});
  return d;
}

// Returns the model after the last epoch.
lp::ModelGraph train(const std::string& preset, int epochs, std::map<int, double> decay) {
  lp::TrainRecipe r;
  r.epochs = epochs;
  r.learning_rate = 0.02;
  r.decay = std::move(decay);
  r.seed = 1;
  return lp::finetune(lp::instantiate(lp::preset_descriptor(preset), 1), desk().train, desk().val, r).last;
}

// Trained until the training accuracy plateaus.
lp::ModelGraph converged_vgg() { return train("toy_vgg", 25, {{15, 0.1}, {22, 0.1}}); }

lp::ArchitectureDescriptor random_vgg(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> width(1, 6), depth(2, 4);
  lp::ArchitectureDescriptor d = tiny_vgg();
  d.layers.clear();
  const int n = depth(rng);
  for (int i = 0; i < n; ++i) d.layers.push_back({lp::LayerToken::Kind::conv, width(rng)});
  return d;
}

void randomize_gammas(lp::ModelGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& [name, t] : g.named_tensors())
    if (name.ends_with("bn.gamma"))
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = n(rng);
}

// ---- 1: oracles -------------------------------------------------------------

void oracles(Outcome& o) {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  auto close = [&](double got, double want, double tol, const std::string& what) {
    const double e = rel_diff(got, want);
    worst = std::max(worst, tol == 1e-6 ? e : 0.0);
    o.check(e <= tol, what);
  };

  for (int trial = 0; trial < 20; ++trial) {
    lp::ModelGraph g = lp::instantiate(random_vgg(rng), 100 + trial);
    randomize_gammas(g, trial);
    const lp::ImportanceTable wn = lp::weight_norm_importance(g), bn = lp::bn_scale_importance(g);
    for (const auto& u : g.units) {
      const lp::Tensor& w = u.convs[0].weight;
      const lp::Tensor& gamma = u.convs[0].bn->gamma;
      double wsum = 0.0, gsum = 0.0;
      for (int f = 0; f < w.dim(0); ++f) {
        double s = 0.0;
        for (int c = 0; c < w.dim(1); ++c)
          for (int i = 0; i < w.dim(2); ++i)
            for (int j = 0; j < w.dim(3); ++j) s += w.at(f, c, i, j) * w.at(f, c, i, j);
        close(wn.filter_scores.at(u.index)[f], std::sqrt(s), 1e-6, "weight norm filter");
        close(bn.filter_scores.at(u.index)[f], gamma[f] * gamma[f], 1e-6, "bn filter");
        wsum += std::sqrt(s);
        gsum += gamma[f] * gamma[f];
      }
      close(wn.layer_scores.at(u.index), wsum / w.dim(0), 1e-6, "weight norm layer");
      close(bn.layer_scores.at(u.index), gsum / w.dim(0), 1e-6, "bn layer");
    }
  }

  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> score(0, 5);
    std::vector<lp::ImportanceTable> tables(3);
    for (auto& t : tables) {
      for (int u = 0; u < 8; ++u) t.layer_scores[u] = score(rng);
      t.rank();
    }
    const lp::ImportanceTable e = lp::ensemble_rank(tables);
    std::map<int, double> sums;
    for (const auto& t : tables)
      for (std::size_t p = 0; p < t.rank_order.size(); ++p) sums[t.rank_order[p]] += p;
    std::vector<int> order;
    for (auto& [u, s] : sums) {
      order.push_back(u);
      close(e.layer_scores.at(u), s, 1e-6, "ensemble sum");
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sums[a] < sums[b]; });
    o.check(e.rank_order == order, "ensemble order");
  }

  for (int trial = 0; trial < 20; ++trial) {
    const int classes = 2 + trial % 4, length = 1 + trial % 7, n = classes * 5;
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<std::vector<double>> emb(n, std::vector<double>(length));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = i % classes;
      for (double& x : emb[i]) x = z(rng);
    }
    const lp::ImprintWeights w = lp::imprint_weights(emb, labels, classes);
    for (int c = 0; c < classes; ++c)
      for (int k = 0; k < length; ++k) {
        double s = 0.0;
        int count = 0;
        for (int i = 0; i < n; ++i)
          if (labels[i] == c) s += emb[i][k], ++count;
        close(w.column(c)[k], s / count, 1e-6, "imprint mean");
      }
    for (int q = 0; q < 20; ++q) {
      std::vector<double> e(length);
      for (double& x : e) x = z(rng);
      int best = 0;
      double best_score = -1e300;
      for (int c = 0; c < classes; ++c) {
        double s = 0.0;
        for (int k = 0; k < length; ++k) s += w.columns[c * length + k] * e[k];
        if (s > best_score) best = c, best_score = s;
      }
      o.check(lp::proxy_predict(w, e) == best, "proxy prediction");
    }
  }

  lp::ModelGraph g = lp::instantiate(two_layer_vgg(), 6);
  jitter_bn(g, 6);
  const auto data = random_batches(g, 2, 5, 7);
  const lp::ImportanceTable t = lp::taylor_weight_importance(g, data, 2);
  auto avg_loss = [&](const lp::ModelGraph& m) { return (model_loss(m, data[0]) + model_loss(m, data[1])) / 2; };
  double worst_fd = 0.0;
  const double h = 1e-6;
  for (auto& u : g.units) {
    lp::Tensor& w = u.convs[0].weight;
    const std::size_t per = w.stride0();
    for (int f = 0; f < w.dim(0); ++f) {
      double s = 0.0;
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t i = f * per + k;
        const double orig = w[i];
        w[i] = orig + h;
        const double up = avg_loss(g);
        w[i] = orig - h;
        const double down = avg_loss(g);
        w[i] = orig;
        const double gw = (up - down) / (2 * h) * orig;
        s += gw * gw;
      }
      const double e = rel_diff(t.filter_scores.at(u.index)[f], std::sqrt(s));
      worst_fd = std::max(worst_fd, e);
      o.check(e <= 1e-3, "taylor finite differences");
    }
  }
  o.detail << "max rel err " << worst << ", taylor fd " << worst_fd;
}

// ---- 2: aggregation law -----------------------------------------------------

void aggregation(Outcome& o) {
  double worst = 0.0;
  for (const char* preset : {"toy_vgg", "toy_resnet"}) {
    lp::ModelGraph g = lp::instantiate(lp::preset_descriptor(preset), 11);
    jitter_bn(g, 11);
    randomize_gammas(g, 11);
    const auto data = random_batches(g, 2, 4, 12);
    for (const char* c : {"weight_norm", "taylor", "bn", "feature_map"}) {
      lp::CriterionOptions opts;
      opts.num_batches = 2;
      const lp::ImportanceTable t = lp::compute_importance(g, c, data, opts);
      o.check(t.layer_scores.size() == g.units.size(), std::string(c) + " covers every unit");
      for (auto& [u, scores] : t.filter_scores) {
        const double e = rel_diff(t.layer_scores.at(u), mean(scores));
        worst = std::max(worst, e);
        o.check(e <= 1e-6, std::string(preset) + " " + c);
      }
    }
  }
  o.detail << "max rel err " << worst;
}

// ---- 3: surgery soundness ---------------------------------------------------

void surgery(Outcome& o) {
  int done = 0;
  for (const char* preset : {"toy_vgg", "toy_resnet"}) {
    const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor(preset), 3);
    std::mt19937_64 rng(5);
    const lp::Tensor x = random_tensor({2, g.input[0], g.input[1], g.input[2]}, 9);
    for (int i = 0; i < 400; ++i) {
      const lp::PrunePlan plan = i % 2 ? random_filter_plan(g, rng) : random_layer_plan(g, rng);
      const std::string tag = std::string(preset) + " plan " + std::to_string(i);
      try {
        lp::ModelGraph p = lp::apply_plan(g, plan);
        lp::Executor exec(p);
        const lp::Tensor y = exec.forward(x, lp::Mode::eval);
        o.check(y.shape() == std::vector<int>{2, g.num_classes}, tag + " output shape");
        o.check(p.parameter_count() == expected_parameters(g, plan), tag + " parameter count");
      } catch (const std::exception& e) {
        o.check(false, tag + " threw " + e.what());
      }
      ++done;
    }
  }
  o.detail << done << " plans (200 layer + 200 filter per model)";
}

// ---- 4: imprint matches the trained classifier ------------------------------

void imprint_match(Outcome& o) {
  const lp::ModelGraph g = converged_vgg();
  const auto batches = lp::make_batches(desk().train, 64);
  const lp::ImprintRanking r = lp::rank_layers_by_imprint(g, batches);
  const double proxy = 100.0 * r.ladder.proxy_accuracies.back();
  const double truth = 100.0 * lp::evaluate_accuracy(g, desk().train);
  o.check(std::abs(proxy - truth) <= 2.0, "final proxy within 2 points");
  o.detail << "proxy " << proxy << "%, classifier " << truth << "% (train split)";
}

// ---- 5: latency envelope ----------------------------------------------------

void latency_envelope(Outcome& o) {
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_resnet"), 1);
  lp::RandomSweepConfig c;
  c.count = 100;
  c.seed = 1;
  const lp::SweepResult r = lp::random_sweep(g, c);
  std::map<lp::SweepFamily, std::pair<double, double>> range;
  for (const auto& e : r.entries) {
    auto [it, fresh] = range.try_emplace(e.family, e.lr_percent, e.lr_percent);
    it->second.first = std::min(it->second.first, e.lr_percent);
    it->second.second = std::max(it->second.second, e.lr_percent);
  }
  const auto f = range.at(lp::SweepFamily::filter), l = range.at(lp::SweepFamily::layer);
  o.check(l.second > f.second, "layer max LR above filter max LR");
  o.check(l.second - l.first > f.second - f.first, "layer LR range wider");
  o.detail << "LR% filter [" << f.first << ", " << f.second << "], layer [" << l.first << ", " << l.second << "]";
}

// ---- 6: iterative vs one-shot filter pruning --------------------------------

void iterative_vs_one_shot(Outcome& o) {
  const lp::ModelGraph g = converged_vgg();
  lp::FilterAblationConfig c;
  c.iterative.filters_per_step = 8;
  c.iterative.steps = 5;
  c.iterative.batches_per_step = 5;
  c.recipe.epochs = 3;
  c.recipe.learning_rate = 0.005;
  c.recipe.seed = 2;
  const lp::FilterAblationResult r = lp::filter_ablation(g, desk().train, desk().val, c);
  const double it = 100.0 * r.median_iterative, one = 100.0 * r.median_one_shot;
  o.check(it >= one - 0.3, "median iterative >= one-shot - 0.3");
  o.detail << "median accuracy iterative " << it << "%, one-shot " << one << "%";
}

// ---- 7: Spearman stability --------------------------------------------------

void spearman(Outcome& o) {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial;
    std::vector<int> a(n), b(n);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(b.begin(), b.end(), rng);
    std::vector<int> pa(n), pb(n);
    for (int i = 0; i < n; ++i) pa[a[i]] = i, pb[b[i]] = i;
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) d2 += double(pa[i] - pb[i]) * (pa[i] - pb[i]);
    const double want = 1.0 - 6.0 * d2 / (double(n) * (double(n) * n - 1.0));
    worst = std::max(worst, std::abs(lp::spearman_rho(a, b) - want));
  }
  o.check(worst <= 1e-12, "spearman oracle");

  // Gated on the default imprint mode; the normalised mode is reported too.
  // With six removable blocks only 6 - n units survive, so one swap at n = 3
  // already gives rho = 0.5.
  const lp::ModelGraph g = train("toy_resnet", 15, {{10, 0.1}});
  const auto data = lp::make_batches(desk().train, 64), eval = lp::make_batches(desk().val, 64);
  o.detail << "oracle err " << worst << "; rho";
  for (const auto& r : lp::spearman_rank_ablation(g, data, eval, 4)) {
    o.check(r.rho >= 0.8, "rho >= 0.8 at n=" + std::to_string(r.n_pruned));
    o.detail << " n" << r.n_pruned << "=" << r.rho;
  }
  lp::ImprintOptions normalized;
  normalized.normalized = true;
  o.detail << "; normalised rho";
  for (const auto& r : lp::spearman_rank_ablation(g, data, eval, 4, normalized)) o.detail << " n" << r.n_pruned << "=" << r.rho;
}

// ---- 8: latency protocol ----------------------------------------------------

void protocol(Outcome& o) {
  int calls = 0;
  const auto r = lp::measure([&](const lp::Tensor&) { ++calls; }, 1, {3, 32, 32});
  o.check(calls == 1010 && r.warmup_iters == 10 && r.timed_iters == 1000, "10 warmup + 1000 timed calls");
  const lp::ModelGraph g = lp::instantiate(lp::preset_descriptor("toy_resnet"), 1);
  const double a = lp::measure(g, 1).mean_ms, b = lp::measure(g, 1).mean_ms;
  const double rel = std::abs(a - b) / std::min(a, b);
  o.check(rel <= 0.10, "repeat measurements within 10%");
  o.detail << calls << " calls; repeats " << a << " ms, " << b << " ms (" << 100.0 * rel << "%)";
}

// ---- 9: reproducibility -----------------------------------------------------

int cli(std::vector<std::string> args) {
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int rc = lp::cli::run(std::move(args));
  std::cout.rdbuf(old);
  return rc;
}

void reproducibility(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / "layerprune_acceptance_rerun";
  fs::remove_all(root);
  auto at = [&](const std::string& n) { return (root / n).string(); };
  const std::vector<std::string> data{"--train-samples", "300", "--val-samples", "100", "--data-seed", "4"};
  auto with_data = [&](std::vector<std::string> a) {
    a.insert(a.end(), data.begin(), data.end());
    return a;
  };
  o.check(cli({"init", "--arch", "toy_resnet", "--seed", "5", "--out", at("base")}) == 0, "init");
  const std::string model = at("base/model.ckpt");
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs{
      {"rank", with_data({"rank", "--model", model, "--criterion", "ensemble", "--seed", "6", "--out", at("rank")})},
      {"prune", with_data({"prune", "--model", model, "--criterion", "imprint", "--layers", "3", "--seed", "7", "--out",
                           at("prune")})},
      {"prune_filters", with_data({"prune", "--model", model, "--criterion", "taylor", "--filters", "20", "--seed", "8",
                                   "--out", at("prune_filters")})},
      {"sweep", {"sweep", "--model", model, "--count", "10", "--iters", "20", "--seed", "9", "--out", at("sweep")}},
      {"finetune", with_data({"finetune", "--model", model, "--epochs", "2", "--lr", "0.02", "--seed", "10", "--out",
                              at("finetune")})}};
  for (const auto& [name, args] : runs) {
    o.check(cli(args) == 0, name + " run");
    const int rc = cli({"rerun", "--manifest", at(name + "/manifest.json"), "--out", at(name + "_rerun")});
    o.check(rc == 0, name + " rerun");
    std::ifstream in(root / (name + "_rerun") / "rerun_check.json");
    const bool ok = in && nlohmann::json::parse(in).value("reproduced", false);
    o.check(ok, name + " reproduced");
    o.detail << name << (ok ? " ok " : " MISMATCH ");
  }
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"equation oracles", oracles},
      {"aggregation law", aggregation},
      {"surgery soundness", surgery},
      {"imprint matches classifier", imprint_match},
      {"latency envelope", latency_envelope},
      {"iterative vs one-shot", iterative_vs_one_shot},
      {"spearman stability", spearman},
      {"latency protocol", protocol},
      {"reproducibility", reproducibility}};

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all_pass = all_pass && o.pass;
    std::string detail = o.detail.str();
    if (!o.pass) detail += " | first failure: " + o.first_failure;
    std::printf("%s %d %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), secs,
                detail.c_str());
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
