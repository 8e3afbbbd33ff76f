#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace layerprune::csv {

using Row = std::vector<std::string>;

struct Table {
  Row header;
  std::vector<Row> rows;

  // Column index by name; throws Config when missing.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

std::string format(double v);
std::string escape(const std::string& field);
void write(const std::filesystem::path& path, const Table& table);
Table read(const std::filesystem::path& path);

}  // namespace layerprune::csv
