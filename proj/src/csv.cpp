#include "layerprune/csv.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "layerprune/error.hpp"

namespace layerprune::csv {

std::size_t Table::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorCode::config, "csv has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool Table::has_column(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

std::string format(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

void write_row(std::ostream& os, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << escape(row[i]);
  os << '\n';
}

Row parse_line(const std::string& line) {
  Row row;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  row.push_back(std::move(cur));
  return row;
}

}  // namespace

void write(const std::filesystem::path& path, const Table& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::io, "cannot write " + path.string());
  write_row(os, table.header);
  for (const Row& r : table.rows) write_row(os, r);
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) return t;
  t.header = parse_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Row r = parse_line(line);
    if (r.size() != t.header.size())
      throw Error(ErrorCode::config, path.string() + ": row has " + std::to_string(r.size()) + " fields");
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace layerprune::csv
