#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qplan {

struct ColumnStat {
    std::string name;
    std::int64_t distinct_count = 0;

    bool operator==(const ColumnStat&) const = default;
};

struct TableStat {
    std::string name;
    std::int64_t row_count = 0;
    std::vector<ColumnStat> columns;

    const ColumnStat* find_column(std::string_view column) const;
    std::optional<std::size_t> column_index(std::string_view column) const;

    bool operator==(const TableStat&) const = default;
};

// Raw statistics as handed to summarize_schema; may violate the clamp rule.
struct RawTable {
    std::string name;
    std::int64_t rows = 0;
    std::vector<std::pair<std::string, std::int64_t>> columns;  // (name, distinct)
};

// Immutable catalog of table statistics.
class SchemaModel {
public:
    SchemaModel() = default;

    const std::vector<TableStat>& tables() const noexcept { return tables_; }
    const TableStat* find(std::string_view table) const;
    const TableStat& at(std::string_view table) const;
    bool empty() const noexcept { return tables_.empty(); }

    bool operator==(const SchemaModel& other) const { return tables_ == other.tables_; }

    friend SchemaModel summarize_schema(const std::vector<RawTable>& raw);

private:
    std::vector<TableStat> tables_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Validates names and counts, clamps distinct counts to the row count.
// Throws SchemaError on duplicate table/column names or negative counts.
SchemaModel summarize_schema(const std::vector<RawTable>& raw);

// JSON-lines: {"name":..., "rows":..., "columns":[{"name":..., "distinct":...}]}
SchemaModel read_schema_jsonl(std::istream& in);
void write_schema_jsonl(const SchemaModel& schema, std::ostream& out);

}  // namespace qplan
