#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace layerprune::report {

namespace fs = std::filesystem;

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

// Quartiles with linear interpolation between order statistics.
BoxStats box_stats(std::vector<double> values);

std::string boxplot_svg(const std::string& title, const std::string& y_label,
                        const std::vector<std::pair<std::string, std::vector<double>>>& groups);
std::string scatter_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series);
std::string bars_svg(const std::string& title, const std::string& y_label,
                     const std::vector<std::pair<std::string, double>>& bars);

// Renders every figure the CSVs in results_dir support into out_dir
// (default results_dir/figures) plus a report.md index. Reads nothing but
// the CSV files. Throws NoResults when none is recognised.
std::vector<fs::path> generate(const fs::path& results_dir, fs::path out_dir = {});

}  // namespace layerprune::report
