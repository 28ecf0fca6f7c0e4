#pragma once

#include <map>
#include <string>
#include <vector>

namespace warpfit::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
  int require_column(const std::string& name, const std::string& file) const;
};

// Plain comma-separated values, no quoting (the formats this tool reads and
// writes never embed commas). Empty fields are kept as empty strings.
Table read_csv(const std::string& path);

void write_csv(const std::string& path, const Table& table);

// Shortest-round-trip style formatting used for every number the project
// emits, so reruns are byte-identical.
std::string format_double(double v);

double parse_double(const std::string& s, const std::string& context);

}  // namespace warpfit::csv
