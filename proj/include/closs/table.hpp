#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace closs::run {

// Small report table: string or numeric cells, missing values allowed.
// All writers are deterministic; numbers are formatted with up to 12
// significant digits so re-running on identical inputs is byte-identical.
class Table {
public:
    using Cell = std::variant<std::monostate, std::string, double>;

    explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t nrows() const { return rows_.size(); }
    std::size_t ncols() const { return columns_.size(); }

    void add_row(std::vector<Cell> row);
    const Cell& cell(std::size_t row, std::size_t col) const;

    std::string cell_text(std::size_t row, std::size_t col) const;
    std::optional<double> cell_number(std::size_t row, std::size_t col) const;

    std::string to_csv(char delimiter = ',') const;
    std::string to_aligned_text() const;
    std::string to_json() const; // {"columns": [...], "rows": [[...], ...]}

    void write_csv(const std::string& path, char delimiter = ',') const;
    void write_aligned_text(const std::string& path) const;
    void write_json(const std::string& path) const;

    static Table read_csv(const std::string& path, char delimiter = ',');

    static std::string format_number(double v);

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<Cell>> rows_;
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

} // namespace closs::run
