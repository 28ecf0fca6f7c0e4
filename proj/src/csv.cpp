#include "warpfit/csv.hpp"

#include "warpfit/types.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace warpfit::csv {

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

int Table::require_column(const std::string& name,
                          const std::string& file) const {
  const int c = column(name);
  if (c < 0)
    throw ParseError(file + ": missing required column '" + name + "'");
  return c;
}

static std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  Table t;
  std::string line;
  int line_no = 0;
  if (std::getline(in, line)) {
    ++line_no;
    t.header = split_line(line);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != t.header.size())
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

void write_csv(const std::string& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open for writing");
  for (std::size_t i = 0; i < table.header.size(); ++i)
    out << (i ? "," : "") << table.header[i];
  out << "\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& context) {
  if (s.empty()) throw ParseError(context + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ParseError(context + ": bad number '" + s + "'");
  return v;
}

}  // namespace warpfit::csv
