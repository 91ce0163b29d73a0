#include "closs/table.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "closs/errors.hpp"

namespace closs::run {

void Table::add_row(std::vector<Cell> row) {
    if (row.size() != columns_.size())
        throw InputError("table row has " + std::to_string(row.size()) + " cells, expected " +
                         std::to_string(columns_.size()));
    rows_.push_back(std::move(row));
}

const Table::Cell& Table::cell(std::size_t row, std::size_t col) const {
    if (row >= rows_.size() || col >= columns_.size())
        throw InputError("table cell index out of range");
    return rows_[row][col];
}

std::string Table::format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string Table::cell_text(std::size_t row, std::size_t col) const {
    const Cell& c = cell(row, col);
    if (std::holds_alternative<std::monostate>(c)) return "";
    if (const auto* s = std::get_if<std::string>(&c)) return *s;
    return format_number(std::get<double>(c));
}

std::optional<double> Table::cell_number(std::size_t row, std::size_t col) const {
    const Cell& c = cell(row, col);
    if (const auto* d = std::get_if<double>(&c)) return *d;
    if (const auto* s = std::get_if<std::string>(&c)) {
        try {
            std::size_t used = 0;
            const double v = std::stod(*s, &used);
            if (used == s->size()) return v;
        } catch (...) {
        }
    }
    return std::nullopt;
}

std::string Table::to_csv(char delimiter) const {
    std::ostringstream out;
    for (std::size_t c = 0; c < columns_.size(); ++c) {
        if (c) out << delimiter;
        out << columns_[c];
    }
    out << "\n";
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            if (c) out << delimiter;
            out << cell_text(r, c);
        }
        out << "\n";
    }
    return out.str();
}

std::string Table::to_aligned_text() const {
    std::vector<std::size_t> width(columns_.size());
    for (std::size_t c = 0; c < columns_.size(); ++c) width[c] = columns_[c].size();
    std::vector<std::vector<std::string>> cells(rows_.size());
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        cells[r].resize(columns_.size());
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            cells[r][c] = cell_text(r, c);
            width[c] = std::max(width[c], cells[r][c].size());
        }
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << "  ";
            out << row[c];
            if (c + 1 < row.size()) out << std::string(width[c] - row[c].size(), ' ');
        }
        out << "\n";
    };
    emit(columns_);
    std::vector<std::string> rule(columns_.size());
    for (std::size_t c = 0; c < columns_.size(); ++c) rule[c] = std::string(width[c], '-');
    emit(rule);
    for (const auto& row : cells) emit(row);
    return out.str();
}

std::string Table::to_json() const {
    nlohmann::ordered_json j;
    j["columns"] = columns_;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            const Cell& cell = rows_[r][c];
            if (std::holds_alternative<std::monostate>(cell))
                row.push_back(nullptr);
            else if (const auto* s = std::get_if<std::string>(&cell))
                row.push_back(*s);
            else
                row.push_back(std::get<double>(cell));
        }
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write file: " + path);
    out << content;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void Table::write_csv(const std::string& path, char delimiter) const {
    write_text_file(path, to_csv(delimiter));
}

void Table::write_aligned_text(const std::string& path) const {
    write_text_file(path, to_aligned_text());
}

void Table::write_json(const std::string& path) const { write_text_file(path, to_json()); }

Table Table::read_csv(const std::string& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open table file: " + path);
    std::string line;
    auto split = [delimiter](const std::string& l) {
        std::vector<std::string> out;
        std::string::size_type start = 0;
        for (;;) {
            const auto pos = l.find(delimiter, start);
            std::string field = pos == std::string::npos ? l.substr(start)
                                                         : l.substr(start, pos - start);
            if (!field.empty() && field.back() == '\r') field.pop_back();
            out.push_back(std::move(field));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        return out;
    };
    if (!std::getline(in, line)) throw InputError("table file is empty: " + path);
    Table t(split(line));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != t.ncols())
            throw InputError("table file " + path + ": ragged row with " +
                             std::to_string(fields.size()) + " fields");
        std::vector<Cell> row;
        row.reserve(fields.size());
        for (auto& f : fields)
            row.emplace_back(f.empty() ? Cell{std::monostate{}} : Cell{std::move(f)});
        t.add_row(std::move(row));
    }
    return t;
}

} // namespace closs::run
