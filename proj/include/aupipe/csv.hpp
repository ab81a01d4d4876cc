#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aupipe/errors.hpp"

namespace aupipe::csv {

using Row = std::vector<std::string>;

/// Splits one RFC 4180 record. Quoted fields may contain commas and doubled
/// quotes; embedded newlines are not supported.
inline Row split(const std::string& line) {
  Row out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ValidationError("csv: unterminated quote in: " + line);
  out.push_back(std::move(field));
  return out;
}

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

struct Table {
  Row header;
  std::vector<Row> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ValidationError("csv: missing column '" + name + "'");
  }
};

/// Reads a headed CSV file; blank lines are skipped and every row must have
/// as many fields as the header.
inline Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto row = split(line);
    if (t.header.empty()) {
      t.header = std::move(row);
      continue;
    }
    if (row.size() != t.header.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, got " + std::to_string(row.size()));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ValidationError(path.string() + ": missing header");
  return t;
}

inline double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("csv: " + what + " is not a number: '" + s + "'");
  }
}

inline long to_long(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("csv: " + what + " is not an integer: '" + s + "'");
  }
}

}  // namespace aupipe::csv
