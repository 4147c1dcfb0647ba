#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace ilb::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based file line of each row

  // Throws Validation when the column is missing.
  std::size_t column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
std::vector<std::string> split_line(std::string_view line);

// Shortest round-trip decimal representation; NaN is written as an empty field.
std::string format_number(double value);
double parse_number(const std::string& text, std::string_view what, std::size_t line);

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path);
  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
};

}  // namespace ilb::csv
