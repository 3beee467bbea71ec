#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace spacewave {

/// Plain comma-separated table (no quoting); blank lines are skipped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

[[nodiscard]] CsvTable read_csv(const std::filesystem::path& path);
[[nodiscard]] std::vector<std::string> split_csv_line(std::string_view line);
[[nodiscard]] double parse_double(std::string_view field, const std::filesystem::path& path, std::size_t line);

}  // namespace spacewave
