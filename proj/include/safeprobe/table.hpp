#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "safeprobe/error.hpp"
#include "safeprobe/format.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

/// Comma-separated table with a fixed header row and optional "# key=value"
/// metadata lines above it. Cells are preformatted strings.
class Table {
public:
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

    Table& meta(std::string key, std::string value) {
        meta_.emplace_back(std::move(key), std::move(value));
        return *this;
    }

    Table& row(std::vector<std::string> cells) {
        detail::require(cells.size() == header_.size(), "table",
                        "row has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(header_.size()));
        rows_.push_back(std::move(cells));
        return *this;
    }

    const std::vector<std::string>& header() const noexcept { return header_; }
    const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }

    std::string str() const {
        std::string out;
        for (const auto& [k, v] : meta_) out += "# " + k + "=" + v + "\n";
        append_line(out, header_);
        for (const auto& r : rows_) append_line(out, r);
        return out;
    }

    void write(const std::filesystem::path& path) const { detail::write_file(path, str()); }

private:
    static void append_line(std::string& out, const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    }

    std::vector<std::string> header_;
    std::vector<std::pair<std::string, std::string>> meta_;
    std::vector<std::vector<std::string>> rows_;
};

/// Shortest round-trip decimal.
inline std::string cell(double x) { return detail::format_double(x); }
inline std::string cell(std::size_t x) { return std::to_string(x); }
inline std::string cell(int x) { return std::to_string(x); }
inline std::string cell(std::string s) { return s; }

/// Fixed decimals, for display columns.
inline std::string fixed(double x, int decimals) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(decimals);
    os << x;
    return os.str();
}

/// Parses a table written by Table::str(); metadata lines are skipped.
inline Table parse_table(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    const auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                cells.push_back(std::move(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(std::move(cur));
        return cells;
    };
    std::optional<Table> t;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        if (!t)
            t.emplace(split(line));
        else
            t->row(split(line));
    }
    detail::require(t.has_value(), "table", "no header row");
    return *t;
}

}  // namespace safeprobe
