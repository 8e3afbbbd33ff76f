#include "layerprune/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "layerprune/csv.hpp"
#include "layerprune/error.hpp"

namespace layerprune::report {

BoxStats box_stats(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

namespace {

constexpr double kW = 640, kH = 400, kL = 70, kR = 20, kT = 40, kB = 70;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

std::string xml(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

struct Range {
  double lo, hi;
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

class Canvas {
 public:
  Canvas(const std::string& title, Range y, const std::string& y_label) : y_(y) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml(title)
        << "</text>\n";
    line(kL, kT, kL, kH - kB);
    line(kL, kH - kB, kW - kR, kH - kB);
    for (int i = 0; i <= 5; ++i) {
      const double v = y.lo + (y.hi - y.lo) * i / 5.0;
      line(kL - 4, py(v), kL, py(v));
      text(kL - 6, py(v) + 4, num(v), "end");
    }
    os_ << "<text transform=\"translate(16," << (kT + kH - kB) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << xml(y_label) << "</text>\n";
  }

  double py(double v) const { return kH - kB - (v - y_.lo) / (y_.hi - y_.lo) * (kH - kT - kB); }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black") {
    os_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
        << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    os_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
        << "\" fill=\"" << fill << "\" fill-opacity=\"0.6\" stroke=\"black\"/>\n";
  }
  void circle(double x, double y, const std::string& fill) {
    os_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"3\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "middle") {
    os_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\">" << xml(s)
        << "</text>\n";
  }
  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  Range y_;
  std::ostringstream os_;
};

}  // namespace

std::string boxplot_svg(const std::string& title, const std::string& y_label,
                        const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
  double lo = 1e300, hi = -1e300;
  for (const auto& [name, v] : groups)
    for (double x : v) lo = std::min(lo, x), hi = std::max(hi, x);
  if (lo > hi) lo = hi = 0.0;
  Canvas c(title, padded(lo, hi), y_label);
  const double slot = (kW - kL - kR) / std::max<std::size_t>(1, groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const BoxStats s = box_stats(groups[i].second);
    const double cx = kL + slot * (i + 0.5), w = slot * 0.4;
    const std::string color = kPalette[i % 6];
    c.line(cx, c.py(s.min), cx, c.py(s.q1));
    c.line(cx, c.py(s.q3), cx, c.py(s.max));
    c.line(cx - w / 4, c.py(s.min), cx + w / 4, c.py(s.min));
    c.line(cx - w / 4, c.py(s.max), cx + w / 4, c.py(s.max));
    c.rect(cx - w / 2, c.py(s.q3), w, std::max(1.0, c.py(s.q1) - c.py(s.q3)), color);
    c.line(cx - w / 2, c.py(s.median), cx + w / 2, c.py(s.median));
    c.text(cx, kH - kB + 18, groups[i].first + " (n=" + std::to_string(groups[i].second.size()) + ")");
  }
  return c.finish();
}

std::string scatter_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series) {
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& [name, pts] : series)
    for (auto [x, y] : pts) xlo = std::min(xlo, x), xhi = std::max(xhi, x), ylo = std::min(ylo, y), yhi = std::max(yhi, y);
  if (xlo > xhi) xlo = xhi = ylo = yhi = 0.0;
  const Range xr = padded(xlo, xhi);
  Canvas c(title, padded(ylo, yhi), y_label);
  auto px = [&](double x) { return kL + (x - xr.lo) / (xr.hi - xr.lo) * (kW - kL - kR); };
  for (int i = 0; i <= 5; ++i) {
    const double v = xr.lo + (xr.hi - xr.lo) * i / 5.0;
    c.line(px(v), kH - kB, px(v), kH - kB + 4);
    c.text(px(v), kH - kB + 16, num(v));
  }
  c.text((kL + kW - kR) / 2, kH - 30, x_label);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const std::string color = kPalette[s % 6];
    for (auto [x, y] : series[s].second) c.circle(px(x), c.py(y), color);
    c.rect(kW - kR - 110, kT + 4 + 16 * s, 10, 10, color);
    c.text(kW - kR - 95, kT + 13 + 16 * s, series[s].first, "start");
  }
  return c.finish();
}

std::string bars_svg(const std::string& title, const std::string& y_label,
                     const std::vector<std::pair<std::string, double>>& bars) {
  double lo = 0.0, hi = 0.0;
  for (const auto& [name, v] : bars) lo = std::min(lo, v), hi = std::max(hi, v);
  Canvas c(title, padded(lo, hi), y_label);
  const double slot = (kW - kL - kR) / std::max<std::size_t>(1, bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = bars[i].second, x = kL + slot * i + slot * 0.15;
    const double top = c.py(std::max(v, 0.0)), bottom = c.py(std::min(v, 0.0));
    c.rect(x, top, slot * 0.7, std::max(0.5, bottom - top), v < 0 ? kPalette[1] : kPalette[0]);
    c.text(x + slot * 0.35, kH - kB + 14, bars[i].first);
  }
  c.line(kL, c.py(0.0), kW - kR, c.py(0.0), "gray");
  return c.finish();
}

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  if (!os) throw Error(ErrorCode::io, "cannot write " + p.string());
  os << s;
}

double to_d(const std::string& s) { return std::stod(s); }

}  // namespace

std::vector<fs::path> generate(const fs::path& results_dir, fs::path out_dir) {
  if (!fs::is_directory(results_dir)) throw Error(ErrorCode::no_results, results_dir.string() + " is not a directory");
  if (out_dir.empty()) out_dir = results_dir / "figures";

  std::vector<fs::path> csvs;
  for (const auto& e : fs::directory_iterator(results_dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
  std::sort(csvs.begin(), csvs.end());

  std::vector<std::pair<fs::path, std::string>> figures;
  std::ostringstream md;
  md << "# Results\n\n";

  // Latency-reduction boxplots of the random sweep, one group per family.
  std::vector<std::pair<std::string, std::vector<double>>> lr_groups;
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> acc_series;
  for (const std::string family : {"filter", "layer"}) {
    const fs::path p = results_dir / ("sweep_" + family + ".csv");
    if (!fs::exists(p)) continue;
    const csv::Table t = csv::read(p);
    const auto bi = t.column("batch_size"), li = t.column("lr_percent"), ai = t.column("accuracy"),
               mi = t.column("mean_ms");
    std::map<int, std::vector<double>> by_batch;
    std::vector<std::pair<double, double>> pts;
    for (const csv::Row& r : t.rows) {
      by_batch[std::stoi(r[bi])].push_back(to_d(r[li]));
      if (!r[ai].empty()) pts.push_back({1000.0 * std::stoi(r[bi]) / to_d(r[mi]), 100.0 * to_d(r[ai])});
    }
    for (auto& [b, v] : by_batch) {
      const BoxStats s = box_stats(v);
      md << "- sweep " << family << " bs=" << b << ": n=" << v.size() << ", LR% min " << num(s.min) << ", median "
         << num(s.median) << ", max " << num(s.max) << "\n";
      lr_groups.push_back({family + " bs" + std::to_string(b), std::move(v)});
    }
    if (!pts.empty()) acc_series.push_back({family, std::move(pts)});
  }
  if (!lr_groups.empty())
    figures.push_back({"sweep_boxplot.svg", boxplot_svg("Random pruning: latency reduction", "LR (%)", lr_groups)});

  const fs::path matrix_path = results_dir / "criterion_matrix.csv";
  if (fs::exists(matrix_path)) {
    const csv::Table t = csv::read(matrix_path);
    const auto ci = t.column("criterion"), bi = t.column("budget"), ai = t.column("accuracy"),
               li = t.column("lr_percent");
    std::vector<std::string> rows;
    std::set<int> budgets;
    std::map<std::pair<std::string, int>, std::string> cell;
    std::map<std::string, std::vector<std::pair<double, double>>> pts;
    for (const csv::Row& r : t.rows) {
      if (std::find(rows.begin(), rows.end(), r[ci]) == rows.end()) rows.push_back(r[ci]);
      const int b = std::stoi(r[bi]);
      budgets.insert(b);
      cell[{r[ci], b}] = r[ai].empty() ? "failed" : num(100.0 * to_d(r[ai]));
      if (!r[ai].empty() && !r[li].empty()) pts[r[ci]].push_back({to_d(r[li]), 100.0 * to_d(r[ai])});
    }
    md << "\n## Layer pruning criteria (accuracy %)\n\n| criterion |";
    for (int b : budgets) md << " " << b << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < budgets.size(); ++i) md << "---|";
    md << "\n";
    for (const std::string& r : rows) {
      md << "| " << r << " |";
      for (int b : budgets) md << " " << (cell.count({r, b}) ? cell[{r, b}] : "") << " |";
      md << "\n";
    }
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series(pts.begin(), pts.end());
    if (!series.empty())
      figures.push_back({"criteria_accuracy_lr.svg",
                         scatter_svg("Layer pruning criteria", "latency reduction (%)", "accuracy (%)", series)});
  }
  if (!acc_series.empty())
    figures.push_back({"sweep_accuracy_throughput.svg",
                       scatter_svg("Accuracy vs throughput", "images / s", "accuracy (%)", acc_series)});

  const fs::path ladder_path = results_dir / "ladder.csv";
  if (fs::exists(ladder_path)) {
    const csv::Table t = csv::read(ladder_path);
    const auto ui = t.column("unit_index"), pi = t.column("proxy_accuracy"), gi = t.column("gain");
    std::vector<std::pair<std::string, double>> acc, gain;
    for (const csv::Row& r : t.rows) {
      acc.push_back({r[ui], 100.0 * to_d(r[pi])});
      gain.push_back({r[ui], 100.0 * to_d(r[gi])});
    }
    figures.push_back({"proxy_accuracy.svg", bars_svg("Imprinted proxy accuracy per unit", "accuracy (%)", acc)});
    figures.push_back({"proxy_gain.svg", bars_svg("Proxy accuracy gain per unit", "gain (points)", gain)});
    md << "\n- ladder: " << t.rows.size() << " candidates\n";
  }

  for (const fs::path& p : csvs) {
    const std::string stem = p.stem().string();
    if (stem.rfind("layers_", 0) != 0) continue;
    const std::string criterion = stem.substr(7);
    const csv::Table t = csv::read(p);
    const auto ui = t.column("unit_index"), si = t.column("layer_score");
    std::vector<std::pair<std::string, double>> bars;
    for (const csv::Row& r : t.rows) bars.push_back({r[ui], to_d(r[si])});
    figures.push_back({"importance_" + criterion + ".svg",
                       bars_svg("Layer importance (" + criterion + ")", "layer score", bars)});
  }

  const fs::path filters_path = results_dir / "ablation_filters.csv";
  if (fs::exists(filters_path)) {
    const csv::Table t = csv::read(filters_path);
    const auto ci = t.column("criterion"), ii = t.column("iterative_accuracy"), oi = t.column("one_shot_accuracy");
    md << "\n## Iterative vs one-shot filter pruning (accuracy %)\n\n| criterion | iterative | one-shot |\n|---|---|---|\n";
    std::vector<std::pair<std::string, double>> diff;
    for (const csv::Row& r : t.rows) {
      md << "| " << r[ci] << " | " << num(100.0 * to_d(r[ii])) << " | " << num(100.0 * to_d(r[oi])) << " |\n";
      diff.push_back({r[ci], 100.0 * (to_d(r[ii]) - to_d(r[oi]))});
    }
    figures.push_back({"ablation_filters.svg", bars_svg("Iterative minus one-shot accuracy", "points", diff)});
  }

  const fs::path spearman_path = results_dir / "ablation_spearman.csv";
  if (fs::exists(spearman_path)) {
    const csv::Table t = csv::read(spearman_path);
    const auto ni = t.column("n_pruned"), oi = t.column("one_shot_accuracy"), ii = t.column("iterative_accuracy"),
               si = t.column("spearman");
    md << "\n## One-shot vs iterative layer ranking\n\n| N pruned | one-shot % | iterative % | Spearman |\n|---|---|---|---|\n";
    std::vector<std::pair<std::string, double>> rho;
    for (const csv::Row& r : t.rows) {
      md << "| " << r[ni] << " | " << num(100.0 * to_d(r[oi])) << " | " << num(100.0 * to_d(r[ii])) << " | "
         << num(to_d(r[si])) << " |\n";
      rho.push_back({r[ni], to_d(r[si])});
    }
    figures.push_back({"spearman.svg", bars_svg("Spearman correlation by units removed", "rho", rho)});
  }

  const fs::path latency_path = results_dir / "latency.csv";
  if (fs::exists(latency_path)) {
    const csv::Table t = csv::read(latency_path);
    const auto bi = t.column("batch_size"), mi = t.column("mean_ms"), si = t.column("std_ms");
    md << "\n## Latency\n\n| batch | mean ms | std ms |\n|---|---|---|\n";
    for (const csv::Row& r : t.rows) md << "| " << r[bi] << " | " << num(to_d(r[mi])) << " | " << num(to_d(r[si])) << " |\n";
  }

  if (figures.empty() && md.str() == "# Results\n\n")
    throw Error(ErrorCode::no_results, "no result CSVs in " + results_dir.string());

  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  md << "\n## Figures\n\n";
  for (const auto& [name, svg] : figures) {
    write_text(out_dir / name, svg);
    written.push_back(out_dir / name);
    md << "- " << name.string() << "\n";
  }
  write_text(out_dir / "report.md", md.str());
  written.push_back(out_dir / "report.md");
  return written;
}

}  // namespace layerprune::report
