// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace vitatt {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;  // 1-based line where each row starts

  // Column index of `name`, or npos.
  std::size_t column(std::string_view name) const;
};

// RFC 4180: comma separated, optional double quotes with "" escapes,
// LF or CRLF line ends. Throws DataError on an unterminated quote.
CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

// Quotes a field when it holds a comma, quote or line break.
std::string csv_field(std::string_view value);
std::string csv_line(const std::vector<std::string>& fields);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace vitatt
