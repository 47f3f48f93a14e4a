#pragma once

#include <string>
#include <vector>

namespace graphmill {

// Minimal comma-separated reader for the numeric tables this project
// exchanges (no quoting or escapes). Blank lines are skipped.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;       // -1 when absent
  int require_column(const std::string& name) const;
};

Csv read_csv(const std::string& path);

}  // namespace graphmill
