#include "graphmill/csv.hpp"

#include <fstream>
#include <stdexcept>

namespace graphmill {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    std::string cell = line.substr(start, pos == std::string::npos ? pos : pos - start);
    // trim whitespace and stray carriage returns
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

int Csv::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

int Csv::require_column(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw std::invalid_argument("csv: missing required column '" + name + "'");
  return c;
}

Csv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  Csv csv;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (!have_header) {
      csv.header = std::move(cells);
      have_header = true;
    } else {
      csv.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw std::runtime_error("csv: empty file " + path);
  return csv;
}

}  // namespace graphmill
