#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qplan/schema.hpp"

namespace qplan {

struct ColumnRef {
    std::string alias;
    std::string column;

    bool operator==(const ColumnRef&) const = default;
    auto operator<=>(const ColumnRef&) const = default;
};

enum class AggFunc { count, sum, avg, min, max };
enum class CompareOp { eq, lt, gt, le, ge, ne };
enum class SortDirection { asc, desc };

std::string_view to_string(AggFunc f);
std::string_view to_string(CompareOp op);

// Integer, decimal or single-quoted string.
using Literal = std::variant<std::int64_t, double, std::string>;

// A projection. Plain column when `agg` is empty; COUNT(*) when `agg` is set
// and `column` is empty. `divisor` is only produced by the teacher when it
// recombines an averaged partial: SUM(column) / SUM(divisor).
struct SelectItem {
    std::optional<AggFunc> agg;
    std::optional<ColumnRef> column;
    std::optional<ColumnRef> divisor;
    std::string name;  // output name; only set inside derived tables

    bool is_aggregate() const noexcept { return agg.has_value(); }
    bool operator==(const SelectItem&) const = default;
};

struct Predicate {
    ColumnRef column;
    CompareOp op = CompareOp::eq;
    Literal value;

    bool operator==(const Predicate&) const = default;
};

// Equality join condition. joins[i] attaches base_tables[i + 1]; one side
// names that alias and the other an alias that appears earlier.
struct JoinCondition {
    ColumnRef left;
    ColumnRef right;

    bool operator==(const JoinCondition&) const = default;
};

struct QueryIR;

// A FROM entry. `table` always names the underlying base table. When
// `derived` is set the entry is the single-table subquery it points to.
struct TableRef {
    std::string table;
    std::string alias;
    std::shared_ptr<const QueryIR> derived;

    bool is_derived() const noexcept { return derived != nullptr; }
    bool operator==(const TableRef& other) const;
};

struct QueryIR {
    std::vector<SelectItem> projections;
    std::vector<TableRef> base_tables;
    std::vector<JoinCondition> joins;
    std::vector<Predicate> predicates;
    std::vector<ColumnRef> group_by;
    std::vector<ColumnRef> order_by;
    SortDirection order_direction = SortDirection::asc;
    std::optional<std::int64_t> limit;
    std::optional<double> sample_rate;

    bool has_aggregates() const;
    const TableRef* find_alias(std::string_view alias) const;
    std::optional<std::size_t> alias_position(std::string_view alias) const;

    bool operator==(const QueryIR&) const = default;
};

struct ComplexityMetrics {
    std::int64_t table_count = 0;
    std::int64_t join_count = 0;
    std::int64_t predicate_count = 0;

    bool operator==(const ComplexityMetrics&) const = default;
};

// Parses the supported SELECT subset. Throws ParseError,
// UnknownIdentifierError, UnsupportedConstructError or InvalidQueryError.
QueryIR parse_sql(std::string_view text, const SchemaModel& schema);

// Canonical SQL: explicit AS aliases, IR order everywhere.
std::string render_sql(const QueryIR& ir);

std::string render_literal(const Literal& value);

ComplexityMetrics complexity(const QueryIR& ir);

// Column names exposed by a FROM entry: the base table's columns, or the
// output names of the derived subquery.
std::vector<std::string> exposed_columns(const TableRef& ref, const SchemaModel& schema);

// Output name of a select item inside a derived table.
std::string output_name(const SelectItem& item);

// Checks the QueryIR invariants (aliases resolve, join tree is connected,
// grouping rules). Derived tables are checked recursively. Throws
// UnknownIdentifierError / InvalidQueryError.
void validate(const QueryIR& ir, const SchemaModel& schema);

}  // namespace qplan
