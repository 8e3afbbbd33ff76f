#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "layerprune/criteria.hpp"
#include "layerprune/experiments.hpp"
#include "layerprune/imprint.hpp"
#include "layerprune/latency.hpp"
#include "layerprune/pruner.hpp"

// Result files of a run directory. Every writer returns the paths it wrote.
namespace layerprune::results {

namespace fs = std::filesystem;

// table_<criterion>.csv (unit_index, filter_index, filter_score),
// layers_<criterion>.csv (unit_index, layer_score, rank, pinned) and a JSON
// summary table_<criterion>.json.
std::vector<fs::path> write_table(const fs::path& dir, const ImportanceTable& table);
// Rebuilds a table from layers_<criterion>.csv and table_<criterion>.csv.
ImportanceTable read_table(const fs::path& dir, const std::string& criterion);

// ladder.csv (unit_index, proxy_accuracy, gain)
std::vector<fs::path> write_ladder(const fs::path& dir, const AccuracyLadder& ladder);

// sweep_<family>.csv per family, sweep_resamples.csv, sweep_baseline.json
std::vector<fs::path> write_sweep(const fs::path& dir, const SweepResult& result);

// criterion_matrix.csv
std::vector<fs::path> write_matrix(const fs::path& dir, const MatrixResult& result);

// ablation_filters.csv
std::vector<fs::path> write_filter_ablation(const fs::path& dir, const FilterAblationResult& result);

// ablation_spearman.csv
std::vector<fs::path> write_spearman(const fs::path& dir, const std::vector<SpearmanRow>& rows);

// latency.csv and latency.json
std::vector<fs::path> write_latency(const fs::path& dir, const std::vector<LatencyReport>& reports,
                                    const std::string& label = "model");

std::vector<fs::path> write_json(const fs::path& path, const nlohmann::json& j);

}  // namespace layerprune::results
