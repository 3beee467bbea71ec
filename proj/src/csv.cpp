#include "spacewave/csv.hpp"

#include "spacewave/error.hpp"

#include <charconv>
#include <fstream>

namespace spacewave {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open " + path.string());
    }
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
        } else {
            table.rows.push_back(std::move(fields));
            table.line_numbers.push_back(line_no);
        }
    }
    if (!have_header) {
        throw Error(ErrorKind::validation, path.string() + ": empty file, no records");
    }
    return table;
}

double parse_double(std::string_view field, const std::filesystem::path& path, std::size_t line) {
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw Error(ErrorKind::parse, path.string() + ": row " + std::to_string(line) + ": cannot parse '" +
                                          std::string(field) + "' as a number");
    }
    return v;
}

}  // namespace spacewave
