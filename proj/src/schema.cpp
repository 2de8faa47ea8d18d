#include "qplan/schema.hpp"

#include <istream>
#include <ostream>
#include <unordered_set>

#include "json.hpp"
#include "qplan/error.hpp"

namespace qplan {

const ColumnStat* TableStat::find_column(std::string_view column) const {
    for (const auto& c : columns) {
        if (c.name == column) return &c;
    }
    return nullptr;
}

std::optional<std::size_t> TableStat::column_index(std::string_view column) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i].name == column) return i;
    }
    return std::nullopt;
}

const TableStat* SchemaModel::find(std::string_view table) const {
    auto it = index_.find(std::string(table));
    return it == index_.end() ? nullptr : &tables_[it->second];
}

const TableStat& SchemaModel::at(std::string_view table) const {
    const TableStat* t = find(table);
    if (t == nullptr) throw UnknownIdentifierError("table", std::string(table));
    return *t;
}

SchemaModel summarize_schema(const std::vector<RawTable>& raw) {
    SchemaModel model;
    for (const auto& r : raw) {
        if (r.name.empty()) throw SchemaError("table name must be non-empty");
        if (model.index_.count(r.name) != 0) throw SchemaError("duplicate table name: " + r.name);
        if (r.rows < 0) throw SchemaError("negative row count for table " + r.name);
        TableStat stat{r.name, r.rows, {}};
        std::unordered_set<std::string> seen;
        for (const auto& [name, distinct] : r.columns) {
            if (name.empty()) throw SchemaError("empty column name in table " + r.name);
            if (!seen.insert(name).second) throw SchemaError("duplicate column " + name + " in table " + r.name);
            if (distinct < 0) throw SchemaError("negative distinct count for " + r.name + "." + name);
            stat.columns.push_back({name, std::min(distinct, r.rows)});
        }
        model.index_.emplace(r.name, model.tables_.size());
        model.tables_.push_back(std::move(stat));
    }
    return model;
}

SchemaModel read_schema_jsonl(std::istream& in) {
    std::vector<RawTable> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            RawTable t;
            t.name = j.at("name").get<std::string>();
            t.rows = j.at("rows").get<std::int64_t>();
            for (const auto& c : j.at("columns")) {
                t.columns.emplace_back(c.at("name").get<std::string>(), c.at("distinct").get<std::int64_t>());
            }
            raw.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("schema line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return summarize_schema(raw);
}

void write_schema_jsonl(const SchemaModel& schema, std::ostream& out) {
    for (const auto& t : schema.tables()) {
        nlohmann::ordered_json cols = nlohmann::ordered_json::array();
        for (const auto& c : t.columns) cols.push_back({{"name", c.name}, {"distinct", c.distinct_count}});
        nlohmann::ordered_json j = {{"name", t.name}, {"rows", t.row_count}, {"columns", cols}};
        out << j.dump() << '\n';
    }
}

}  // namespace qplan
