#include "cachexia/csv.hpp"

#include <fmt/format.h>

#include <fstream>
#include <istream>
#include <ostream>

#include "cachexia/error.hpp"

namespace cachexia::csv {

std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    out << escape(row[i]);
  }
  out << '\n';
}

std::optional<std::string> Table::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return std::nullopt;
}

std::optional<std::size_t> Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

namespace {

// Splits one logical record; quoted fields may span physical lines.
bool next_record(std::istream& in, Row& row) {
  row.clear();
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  row.push_back(std::move(field));
  return true;
}

}  // namespace

Table read(std::istream& in) {
  Table t;
  while (in.peek() == '#') {
    std::string line;
    std::getline(in, line);
    auto body = line.substr(1);
    auto colon = body.find(':');
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    if (colon != std::string::npos)
      t.metadata.emplace_back(trim(body.substr(0, colon)), trim(body.substr(colon + 1)));
  }
  Row row;
  if (!next_record(in, t.header)) return t;
  while (next_record(in, row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    t.rows.push_back(row);
  }
  return t;
}

Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  return read(in);
}

std::string format_number(double v) { return fmt::format("{}", v); }

}  // namespace cachexia::csv
