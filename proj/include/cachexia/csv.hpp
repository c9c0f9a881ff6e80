#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cachexia::csv {

using Row = std::vector<std::string>;

std::string escape(const std::string& field);
void write_row(std::ostream& out, const Row& row);

/// Parsed table. Leading `# key: value` comment lines are collected as metadata.
struct Table {
  std::vector<std::pair<std::string, std::string>> metadata;
  Row header;
  std::vector<Row> rows;

  std::optional<std::string> meta(const std::string& key) const;
  std::optional<std::size_t> column(const std::string& name) const;
};

Table read(std::istream& in);
Table read_file(const std::string& path);

/// Shortest round-trip decimal rendering of a double.
std::string format_number(double v);

}  // namespace cachexia::csv
