#include "layerprune/results.hpp"

#include <fstream>

#include "layerprune/csv.hpp"
#include "layerprune/error.hpp"

namespace layerprune::results {

using csv::format;

std::vector<fs::path> write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::io, "cannot write " + path.string());
  os << j.dump(2) << '\n';
  return {path};
}

namespace {

std::string join(const std::vector<int>& v, char sep = ' ') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
  return s;
}

std::string opt(const std::optional<double>& v) { return v ? format(*v) : ""; }

}  // namespace

std::vector<fs::path> write_table(const fs::path& dir, const ImportanceTable& table) {
  const std::string& c = table.criterion;
  csv::Table filters{{"unit_index", "filter_index", "filter_score"}, {}};
  for (const auto& [u, scores] : table.filter_scores)
    for (std::size_t f = 0; f < scores.size(); ++f)
      filters.rows.push_back({std::to_string(u), std::to_string(f), format(scores[f])});
  csv::Table layers{{"unit_index", "layer_score", "rank", "pinned"}, {}};
  std::map<int, int> rank;
  for (std::size_t i = 0; i < table.rank_order.size(); ++i) rank[table.rank_order[i]] = static_cast<int>(i);
  for (const auto& [u, s] : table.layer_scores)
    layers.rows.push_back({std::to_string(u), format(s), std::to_string(rank.at(u)), table.pinned.count(u) ? "1" : "0"});

  const fs::path fp = dir / ("table_" + c + ".csv"), lp = dir / ("layers_" + c + ".csv");
  csv::write(fp, filters);
  csv::write(lp, layers);
  nlohmann::json j{{"criterion", c}, {"rank_order", table.rank_order}, {"pinned", table.pinned}};
  for (const auto& [u, s] : table.layer_scores) j["layer_scores"][std::to_string(u)] = s;
  auto jp = write_json(dir / ("table_" + c + ".json"), j);
  return {fp, lp, jp.front()};
}

ImportanceTable read_table(const fs::path& dir, const std::string& criterion) {
  ImportanceTable t;
  t.criterion = criterion;
  const csv::Table layers = csv::read(dir / ("layers_" + criterion + ".csv"));
  const auto ui = layers.column("unit_index"), si = layers.column("layer_score"), pi = layers.column("pinned");
  for (const csv::Row& r : layers.rows) {
    const int u = std::stoi(r[ui]);
    t.layer_scores[u] = std::stod(r[si]);
    if (r[pi] == "1") t.pinned.insert(u);
  }
  const fs::path fp = dir / ("table_" + criterion + ".csv");
  if (fs::exists(fp)) {
    const csv::Table filters = csv::read(fp);
    const auto fu = filters.column("unit_index"), fs_ = filters.column("filter_score");
    for (const csv::Row& r : filters.rows) t.filter_scores[std::stoi(r[fu])].push_back(std::stod(r[fs_]));
  }
  t.rank();
  return t;
}

std::vector<fs::path> write_ladder(const fs::path& dir, const AccuracyLadder& ladder) {
  csv::Table t{{"unit_index", "proxy_accuracy", "gain"}, {}};
  for (std::size_t i = 0; i < ladder.candidates.size(); ++i)
    t.rows.push_back({std::to_string(ladder.candidates[i]), format(ladder.proxy_accuracies[i]), format(ladder.gains[i])});
  const fs::path p = dir / "ladder.csv";
  csv::write(p, t);
  return {p};
}

std::vector<fs::path> write_sweep(const fs::path& dir, const SweepResult& result) {
  std::vector<fs::path> out;
  std::map<SweepFamily, csv::Table> per_family;
  for (const SweepEntry& e : result.entries) {
    csv::Table& t = per_family[e.family];
    if (t.header.empty())
      t.header = {"family", "index", "attempts", "batch_size", "mean_ms", "std_ms", "lr_percent", "accuracy",
                  "signature", "retained"};
    t.rows.push_back({to_string(e.family), std::to_string(e.index), std::to_string(e.attempts),
                      std::to_string(e.batch_size), format(e.mean_ms), format(e.std_ms), format(e.lr_percent),
                      opt(e.accuracy), e.signature, join(e.retained)});
  }
  for (const auto& [family, t] : per_family) {
    out.push_back(dir / ("sweep_" + to_string(family) + ".csv"));
    csv::write(out.back(), t);
  }
  csv::Table rs{{"family", "index", "attempt", "cause"}, {}};
  for (const ResampleEvent& r : result.resamples)
    rs.rows.push_back({to_string(r.family), std::to_string(r.index), std::to_string(r.attempt), r.cause});
  out.push_back(dir / "sweep_resamples.csv");
  csv::write(out.back(), rs);
  nlohmann::json base = nlohmann::json::array();
  for (const LatencyReport& r : result.baseline) base.push_back(to_json(r));
  out.push_back(write_json(dir / "sweep_baseline.json", base).front());
  return out;
}

std::vector<fs::path> write_matrix(const fs::path& dir, const MatrixResult& result) {
  csv::Table t{{"criterion", "budget", "accuracy", "lr_percent", "baseline_accuracy", "signature", "removed", "error"},
               {}};
  for (const MatrixCell& c : result.cells)
    t.rows.push_back({c.criterion, std::to_string(c.budget), opt(c.accuracy), opt(c.lr_percent),
                      format(result.baseline_accuracy), c.signature, join(c.removed), c.error});
  const fs::path p = dir / "criterion_matrix.csv";
  csv::write(p, t);
  return {p};
}

std::vector<fs::path> write_filter_ablation(const fs::path& dir, const FilterAblationResult& result) {
  csv::Table t{{"criterion", "iterative_accuracy", "one_shot_accuracy", "iterative_removed", "one_shot_removed",
                "iterative_signature", "one_shot_signature"},
               {}};
  for (const FilterAblationRow& r : result.rows)
    t.rows.push_back({r.criterion, format(r.iterative_accuracy), format(r.one_shot_accuracy),
                      std::to_string(r.iterative_removed), std::to_string(r.one_shot_removed), r.iterative_signature,
                      r.one_shot_signature});
  const fs::path p = dir / "ablation_filters.csv";
  csv::write(p, t);
  return {p};
}

std::vector<fs::path> write_spearman(const fs::path& dir, const std::vector<SpearmanRow>& rows) {
  csv::Table t{{"n_pruned", "one_shot_accuracy", "iterative_accuracy", "spearman", "one_shot_removed",
                "iterative_removed"},
               {}};
  for (const SpearmanRow& r : rows)
    t.rows.push_back({std::to_string(r.n_pruned), format(r.one_shot_accuracy), format(r.iterative_accuracy),
                      format(r.rho), join(r.one_shot_removed), join(r.iterative_removed)});
  const fs::path p = dir / "ablation_spearman.csv";
  csv::write(p, t);
  return {p};
}

std::vector<fs::path> write_latency(const fs::path& dir, const std::vector<LatencyReport>& reports,
                                    const std::string& label) {
  csv::Table t{{"model", "device", "batch_size", "warmup_iters", "timed_iters", "mean_ms", "std_ms"}, {}};
  nlohmann::json j = nlohmann::json::array();
  for (const LatencyReport& r : reports) {
    t.rows.push_back({label, r.device_label, std::to_string(r.batch_size), std::to_string(r.warmup_iters),
                      std::to_string(r.timed_iters), format(r.mean_ms), format(r.std_ms)});
    j.push_back(to_json(r));
  }
  const fs::path p = dir / "latency.csv";
  csv::write(p, t);
  return {p, write_json(dir / "latency.json", j).front()};
}

}  // namespace layerprune::results
