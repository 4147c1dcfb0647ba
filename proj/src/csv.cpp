#include "ilb/csv.hpp"

#include <charconv>
#include <cmath>

#include "ilb/error.hpp"

namespace ilb::csv {

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  fail(ErrorKind::Validation, "missing column '" + std::string(name) + "'");
}

std::vector<std::string> split_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(begin));
      break;
    }
    fields.emplace_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
  return fields;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  Table table;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line_number == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
      line.erase(0, 3);
    }
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    require(fields.size() == table.header.size(), ErrorKind::Validation,
            path.filename().string() + " line " + std::to_string(line_number) + ": expected " +
                std::to_string(table.header.size()) + " fields, got " +
                std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_number);
  }
  require(!table.header.empty(), ErrorKind::Validation, path.string() + " has no header");
  return table;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

double parse_number(const std::string& text, std::string_view what, std::size_t line) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  if (first < last && *first == '+') ++first;
  const auto result = std::from_chars(first, last, value);
  require(result.ec == std::errc() && result.ptr == last, ErrorKind::Validation,
          "line " + std::to_string(line) + ": cannot parse " + std::string(what) + " '" + text +
              "'");
  return value;
}

Writer::Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
  require(static_cast<bool>(out_), ErrorKind::Io, "cannot write " + path.string());
}

void Writer::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << fields[i];
  }
  out_ << '\n';
}

}  // namespace ilb::csv
