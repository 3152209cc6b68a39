#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fcil::csv {

/// Comma-separated table with a header row. Quoted fields may contain commas,
/// doubled quotes and newlines.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column, if present.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// Throws IoError if the file cannot be opened.
Table read_file(const std::filesystem::path& path);
Table parse(std::string_view text);

/// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

/// Finite number or nothing; surrounding blanks are ignored, NaN and Inf count as missing.
std::optional<double> parse_number(std::string_view text);

/// Shortest representation that reads back to the same double.
std::string format_number(double value);

}  // namespace fcil::csv
