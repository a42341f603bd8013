#ifndef AREALRISK_CSV_HPP
#define AREALRISK_CSV_HPP

#include "arealrisk/error.hpp"

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace arealrisk::csv {

/// A parsed comma-separated table. Quoting is not supported: region ids and
/// numeric fields never contain commas in the formats this library reads.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    return std::nullopt;
  }
};

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

/// Reads a header line plus rows. Blank lines and lines starting with '#' are
/// skipped; every row must have exactly as many fields as the header.
inline Table read(std::istream &in, const std::string &source = "<stream>") {
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    auto fields = split_line(stripped);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(table.header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw DataError(source + ": empty file");
  return table;
}

inline Table read_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read(in, path.string());
}

inline double parse_double(const std::string &field, const std::string &context) {
  double value = 0.0;
  const auto *end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw DataError(context + ": not a number: '" + field + "'");
  return value;
}

inline std::int64_t parse_int(const std::string &field, const std::string &context) {
  std::int64_t value = 0;
  const auto *end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw DataError(context + ": not an integer: '" + field + "'");
  return value;
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc()) return "nan";
  return std::string(buffer, ptr);
}

inline void write_row(std::ostream &out, const std::vector<std::string> &fields) {
  for (std::size_t c = 0; c < fields.size(); ++c) {
    if (c) out << ',';
    out << fields[c];
  }
  out << '\n';
}

} // namespace arealrisk::csv

#endif // AREALRISK_CSV_HPP
