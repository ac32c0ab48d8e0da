#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace polyarg::csv {

// Comma-separated, double-quote escaped, quoted fields may span lines.
struct Row {
  std::size_t line = 0;  // 1-based physical line where the row starts
  std::vector<std::string> fields;
};

std::vector<Row> parse(std::istream& in);
std::vector<Row> read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

}  // namespace polyarg::csv
