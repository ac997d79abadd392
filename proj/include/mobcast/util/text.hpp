#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mobcast::util {

// Splits one CSV line. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

// Reads a headed CSV; blank lines are skipped, a UTF-8 BOM is tolerated.
CsvFile read_csv(const std::filesystem::path& path);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);
// Strict full-string parse; throws std::invalid_argument.
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::string read_file(const std::filesystem::path& path);
// Writes atomically enough for our purposes: whole buffer, binary mode.
void write_file(const std::filesystem::path& path, std::string_view contents);

// FNV-1a 64-bit, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace mobcast::util
