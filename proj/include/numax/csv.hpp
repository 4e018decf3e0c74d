#pragma once

#include <charconv>
#include <istream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "numax/core.hpp"

namespace numax::csv {

/// 17 significant digits: enough for any double to round-trip exactly.
inline std::string format(double value) {
  char buf[64];
  auto [ptr, ec] =
      std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view line,
                                           char sep = ',') {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

/// Parses one numeric cell; `where` is prefixed to the error message.
inline double parse_double(std::string_view cell, const std::string& where) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw ConfigError(where + ": not a number: '" + std::string(cell) + "'");
  }
  return value;
}

/// A data line with its 1-based line number in the source.
struct Line {
  long number = 0;
  std::string text;
};

/// Reads non-empty lines. Lines starting with '#' are returned separately so
/// readers can inspect header comments.
inline std::vector<Line> read_lines(std::istream& in,
                                    std::vector<std::string>* comments = nullptr) {
  std::vector<Line> lines;
  std::string text;
  long number = 0;
  while (std::getline(in, text)) {
    ++number;
    const auto t = trim(text);
    if (t.empty()) continue;
    if (t.front() == '#') {
      if (comments != nullptr) comments->emplace_back(t);
      continue;
    }
    lines.push_back({number, std::string(t)});
  }
  return lines;
}

}  // namespace numax::csv
