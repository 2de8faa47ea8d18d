#include "qplan/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <charconv>

#include "json.hpp"
#include "qplan/error.hpp"
#include "qplan/rng.hpp"

namespace qplan {

void Constraints::check() const {
    if (!(c_mem > 0) || !(c_lat > 0)) throw PreconditionError("constraints must be positive");
}

void ResourceSnapshot::check() const {
    if (!(memory_in_use >= 0)) throw PreconditionError("memory in use must be non-negative");
    if (!(cpu_load >= 0 && cpu_load <= 1)) throw PreconditionError("cpu load must lie in [0, 1]");
}

bool check_feasible(double latency_ms, double memory_bytes, const Constraints& constraints) {
    return memory_bytes <= constraints.c_mem && latency_ms <= constraints.c_lat;
}

ExecutionTrace make_trace(std::string query_id, PlanConfig config, double latency_ms, double memory_bytes,
                          const Constraints& constraints, std::uint64_t timestamp, std::uint64_t seed) {
    return {std::move(query_id), config, latency_ms, memory_bytes,
            check_feasible(latency_ms, memory_bytes, constraints), timestamp, seed};
}

void write_trace_jsonl(std::ostream& out, const std::vector<ExecutionTrace>& traces) {
    for (const auto& t : traces) {
        nlohmann::ordered_json j;
        j["query_id"] = t.query_id;
        j["arm"] = t.config.arm();
        j["flags"] = t.config.bitstring();
        j["latency_ms"] = t.latency_ms;
        j["memory_bytes"] = t.memory_bytes;
        j["feasible"] = t.feasible;
        j["seed"] = t.seed;
        out << j.dump() << '\n';
    }
}

std::vector<ExecutionTrace> read_trace_jsonl(std::istream& in, const Constraints& constraints) {
    std::vector<ExecutionTrace> out;
    std::string line;
    std::uint64_t tick = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            const auto config = PlanConfig::from_arm(j.at("arm").get<int>());
            if (j.at("flags").get<std::string>() != config.bitstring()) {
                throw FormatError("trace flags do not match arm " + std::to_string(config.arm()));
            }
            ExecutionTrace t = make_trace(j.at("query_id").get<std::string>(), config, j.at("latency_ms").get<double>(),
                                          j.at("memory_bytes").get<double>(), constraints, tick++,
                                          j.at("seed").get<std::uint64_t>());
            if (t.feasible != j.at("feasible").get<bool>()) {
                throw FormatError("trace feasibility disagrees with constraints for query " + t.query_id);
            }
            out.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("trace log: ") + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// values

namespace {

int type_rank(const Value& v) {
    if (std::holds_alternative<std::monostate>(v)) return 0;
    if (std::holds_alternative<std::string>(v)) return 2;
    return 1;
}

double as_double(const Value& v) {
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    return std::get<double>(v);
}

Value from_literal(const Literal& lit) {
    return std::visit([](const auto& x) -> Value { return x; }, lit);
}

// Comparison for predicates and join keys; numbers and strings do not mix.
int compare_checked(const Value& a, const Value& b) {
    const int ra = type_rank(a);
    const int rb = type_rank(b);
    if (ra != rb || ra == 0) throw EvaluationError("type mismatch in comparison");
    return compare_values(a, b);
}

bool holds(CompareOp op, int cmp) {
    switch (op) {
        case CompareOp::eq: return cmp == 0;
        case CompareOp::ne: return cmp != 0;
        case CompareOp::lt: return cmp < 0;
        case CompareOp::gt: return cmp > 0;
        case CompareOp::le: return cmp <= 0;
        case CompareOp::ge: return cmp >= 0;
    }
    return false;
}

}  // namespace

int compare_values(const Value& a, const Value& b) {
    const int ra = type_rank(a);
    const int rb = type_rank(b);
    if (ra != rb) return ra < rb ? -1 : 1;
    if (ra == 0) return 0;
    if (ra == 2) {
        const auto& sa = std::get<std::string>(a);
        const auto& sb = std::get<std::string>(b);
        return sa < sb ? -1 : (sb < sa ? 1 : 0);
    }
    const auto* ia = std::get_if<std::int64_t>(&a);
    const auto* ib = std::get_if<std::int64_t>(&b);
    if (ia && ib) return *ia < *ib ? -1 : (*ib < *ia ? 1 : 0);
    const double da = as_double(a);
    const double db = as_double(b);
    return da < db ? -1 : (db < da ? 1 : 0);
}

// ---------------------------------------------------------------------------
// reference evaluator

namespace {

struct Source {
    std::string alias;
    Relation rel;
};

struct Bound {
    std::size_t source = 0;
    std::size_t column = 0;
};

class Evaluator {
public:
    Evaluator(const QueryIR& ir, const Database& data) : ir_(ir), data_(data) {}

    Relation run() {
        if (ir_.sample_rate && *ir_.sample_rate != 1.0) {
            throw PreconditionError("reference evaluator cannot run sampled queries");
        }
        load_sources();
        std::vector<std::vector<std::size_t>> rows = join_all();
        sort_by_provenance(rows);
        const bool aggregated = ir_.has_aggregates() || !ir_.group_by.empty();
        return aggregated ? aggregate(rows) : project(rows);
    }

private:
    void load_sources() {
        for (const auto& ref : ir_.base_tables) {
            Source s;
            s.alias = ref.alias;
            if (ref.is_derived()) {
                s.rel = Evaluator(*ref.derived, data_).run();
            } else {
                auto it = data_.find(ref.table);
                if (it == data_.end()) throw EvaluationError("missing table: " + ref.table);
                s.rel = it->second;
            }
            sources_.push_back(std::move(s));
        }
    }

    Bound bind(const ColumnRef& c) const {
        for (std::size_t i = 0; i < sources_.size(); ++i) {
            if (sources_[i].alias != c.alias) continue;
            const auto& cols = sources_[i].rel.columns;
            auto it = std::find(cols.begin(), cols.end(), c.column);
            if (it == cols.end()) throw EvaluationError("missing column: " + c.alias + "." + c.column);
            return {i, static_cast<std::size_t>(it - cols.begin())};
        }
        throw EvaluationError("missing alias: " + c.alias);
    }

    const Value& value(const std::vector<std::size_t>& row, const Bound& b) const {
        return sources_[b.source].rel.rows[row[b.source]][b.column];
    }

    // Predicates become checkable once every source they mention is bound.
    std::vector<std::vector<std::size_t>> join_all() const {
        std::vector<Bound> pred_bounds;
        for (const auto& p : ir_.predicates) pred_bounds.push_back(bind(p.column));
        const auto passes = [&](const std::vector<std::size_t>& row, std::size_t newest) {
            for (std::size_t k = 0; k < ir_.predicates.size(); ++k) {
                if (pred_bounds[k].source != newest) continue;
                const Value lit = from_literal(ir_.predicates[k].value);
                if (!holds(ir_.predicates[k].op, compare_checked(value(row, pred_bounds[k]), lit))) return false;
            }
            return true;
        };

        std::vector<std::vector<std::size_t>> current;
        const std::size_t n = sources_.size();
        for (std::size_t r = 0; r < sources_[0].rel.rows.size(); ++r) {
            std::vector<std::size_t> row(n, 0);
            row[0] = r;
            if (passes(row, 0)) current.push_back(std::move(row));
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const Bound l = bind(ir_.joins[i].left);
            const Bound r = bind(ir_.joins[i].right);
            const std::size_t added = i + 1;
            std::vector<std::vector<std::size_t>> next;
            for (const auto& partial : current) {
                for (std::size_t k = 0; k < sources_[added].rel.rows.size(); ++k) {
                    auto row = partial;
                    row[added] = k;
                    if (compare_checked(value(row, l), value(row, r)) != 0) continue;
                    if (passes(row, added)) next.push_back(std::move(row));
                }
            }
            current = std::move(next);
        }
        return current;
    }

    void sort_by_provenance(std::vector<std::vector<std::size_t>>& rows) const {
        std::vector<std::size_t> by_alias(sources_.size());
        std::iota(by_alias.begin(), by_alias.end(), 0);
        std::sort(by_alias.begin(), by_alias.end(),
                  [&](std::size_t a, std::size_t b) { return sources_[a].alias < sources_[b].alias; });
        std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
            for (std::size_t s : by_alias) {
                if (a[s] != b[s]) return a[s] < b[s];
            }
            return false;
        });
    }

    template <class Item>
    void order_and_limit(std::vector<Item>& items) const {
        if (!ir_.order_by.empty()) {
            const bool desc = ir_.order_direction == SortDirection::desc;
            std::stable_sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
                for (std::size_t k = 0; k < a.keys.size(); ++k) {
                    const int c = compare_values(a.keys[k], b.keys[k]);
                    if (c != 0) return desc ? c > 0 : c < 0;
                }
                return false;
            });
        }
        if (ir_.limit && static_cast<std::size_t>(*ir_.limit) < items.size()) {
            items.resize(static_cast<std::size_t>(*ir_.limit));
        }
    }

    struct OutRow {
        std::vector<Value> keys;
        std::vector<Value> values;
    };

    Relation finish(std::vector<OutRow>& out) const {
        order_and_limit(out);
        Relation rel;
        for (const auto& item : ir_.projections) rel.columns.push_back(output_name(item));
        for (auto& r : out) rel.rows.push_back(std::move(r.values));
        return rel;
    }

    Relation project(const std::vector<std::vector<std::size_t>>& rows) const {
        std::vector<Bound> items;
        for (const auto& item : ir_.projections) items.push_back(bind(*item.column));
        std::vector<Bound> keys;
        for (const auto& c : ir_.order_by) keys.push_back(bind(c));
        std::vector<OutRow> out;
        out.reserve(rows.size());
        for (const auto& row : rows) {
            OutRow o;
            for (const auto& b : keys) o.keys.push_back(value(row, b));
            for (const auto& b : items) o.values.push_back(value(row, b));
            out.push_back(std::move(o));
        }
        return finish(out);
    }

    static Value sum_of(const std::vector<Value>& vals) {
        bool all_int = true;
        std::int64_t isum = 0;
        double dsum = 0;
        for (const auto& v : vals) {
            if (type_rank(v) != 1) throw EvaluationError("type mismatch: SUM over non-numeric column");
            if (const auto* i = std::get_if<std::int64_t>(&v)) {
                isum += *i;
            } else {
                all_int = false;
            }
            dsum += as_double(v);
        }
        if (all_int) return isum;
        return dsum;
    }

    Value aggregate_item(const SelectItem& item, const std::vector<std::vector<std::size_t>>& rows,
                         const std::vector<std::size_t>& members) const {
        if (!item.column) return static_cast<std::int64_t>(members.size());
        const Bound b = bind(*item.column);
        std::vector<Value> vals;
        vals.reserve(members.size());
        for (std::size_t m : members) vals.push_back(value(rows[m], b));
        switch (*item.agg) {
            case AggFunc::count: return static_cast<std::int64_t>(vals.size());
            case AggFunc::sum: {
                if (!item.divisor) return sum_of(vals);
                const Bound d = bind(*item.divisor);
                std::vector<Value> dvals;
                for (std::size_t m : members) dvals.push_back(value(rows[m], d));
                const double den = as_double(sum_of(dvals));
                if (den == 0) return std::monostate{};
                return as_double(sum_of(vals)) / den;
            }
            case AggFunc::avg: {
                if (vals.empty()) return std::monostate{};
                return as_double(sum_of(vals)) / static_cast<double>(vals.size());
            }
            case AggFunc::min:
            case AggFunc::max: {
                if (vals.empty()) return std::monostate{};
                Value best = vals.front();
                for (const auto& v : vals) {
                    const int c = compare_checked(v, best);
                    if ((*item.agg == AggFunc::min && c < 0) || (*item.agg == AggFunc::max && c > 0)) best = v;
                }
                return best;
            }
        }
        return std::monostate{};
    }

    Relation aggregate(const std::vector<std::vector<std::size_t>>& rows) const {
        std::vector<Bound> key_bounds;
        for (const auto& c : ir_.group_by) key_bounds.push_back(bind(c));
        const auto less = [](const std::vector<Value>& a, const std::vector<Value>& b) {
            for (std::size_t i = 0; i < a.size(); ++i) {
                const int c = compare_values(a[i], b[i]);
                if (c != 0) return c < 0;
            }
            return false;
        };
        std::map<std::vector<Value>, std::vector<std::size_t>, decltype(less)> groups(less);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::vector<Value> key;
            for (const auto& b : key_bounds) key.push_back(value(rows[r], b));
            groups[std::move(key)].push_back(r);
        }
        if (ir_.group_by.empty() && groups.empty()) groups[{}];

        std::vector<OutRow> out;
        for (const auto& [key, members] : groups) {
            OutRow o;
            for (const auto& c : ir_.order_by) {
                auto it = std::find(ir_.group_by.begin(), ir_.group_by.end(), c);
                o.keys.push_back(key[static_cast<std::size_t>(it - ir_.group_by.begin())]);
            }
            for (const auto& item : ir_.projections) {
                if (item.agg) {
                    o.values.push_back(aggregate_item(item, rows, members));
                } else {
                    auto it = std::find(ir_.group_by.begin(), ir_.group_by.end(), *item.column);
                    o.values.push_back(key[static_cast<std::size_t>(it - ir_.group_by.begin())]);
                }
            }
            out.push_back(std::move(o));
        }
        return finish(out);
    }

    const QueryIR& ir_;
    const Database& data_;
    std::vector<Source> sources_;
};

}  // namespace

Relation evaluate_reference(const QueryIR& ir, const Database& data) { return Evaluator(ir, data).run(); }

bool multiset_equal(const Relation& a, const Relation& b, double rel_tol) {
    if (a.rows.size() != b.rows.size()) return false;
    if (!a.rows.empty() && a.rows.front().size() != b.rows.front().size()) return false;
    const auto less = [](const std::vector<Value>& x, const std::vector<Value>& y) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const int c = compare_values(x[i], y[i]);
            if (c != 0) return c < 0;
        }
        return false;
    };
    auto ra = a.rows;
    auto rb = b.rows;
    std::sort(ra.begin(), ra.end(), less);
    std::sort(rb.begin(), rb.end(), less);
    for (std::size_t r = 0; r < ra.size(); ++r) {
        for (std::size_t c = 0; c < ra[r].size(); ++c) {
            const Value& x = ra[r][c];
            const Value& y = rb[r][c];
            if (type_rank(x) != type_rank(y)) return false;
            if (type_rank(x) == 1) {
                const double dx = as_double(x);
                const double dy = as_double(y);
                if (std::abs(dx - dy) > rel_tol * std::max({1.0, std::abs(dx), std::abs(dy)})) return false;
            } else if (compare_values(x, y) != 0) {
                return false;
            }
        }
    }
    return true;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    out.push_back(std::move(cell));
    return out;
}

Value parse_cell(const std::string& cell) {
    std::int64_t i = 0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty()) {
        auto [p, ec] = std::from_chars(first, last, i);
        if (ec == std::errc() && p == last) return i;
        double d = 0;
        auto [pd, ecd] = std::from_chars(first, last, d);
        if (ecd == std::errc() && pd == last) return d;
    }
    return cell;
}

}  // namespace

Relation read_csv_relation(std::istream& in) {
    Relation rel;
    std::string line;
    if (!std::getline(in, line)) throw FormatError("CSV input has no header row");
    rel.columns = split_csv_line(line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (cells.size() != rel.columns.size()) {
            throw FormatError("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                              " fields, expected " + std::to_string(rel.columns.size()));
        }
        std::vector<Value> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_cell(c));
        rel.rows.push_back(std::move(row));
    }
    return rel;
}

SchemaModel schema_from_database(const Database& data) {
    std::vector<RawTable> raw;
    for (const auto& [name, rel] : data) {
        RawTable t{name, static_cast<std::int64_t>(rel.rows.size()), {}};
        for (std::size_t c = 0; c < rel.columns.size(); ++c) {
            std::vector<Value> col;
            for (const auto& row : rel.rows) col.push_back(row[c]);
            std::sort(col.begin(), col.end(), [](const Value& a, const Value& b) { return compare_values(a, b) < 0; });
            auto end = std::unique(col.begin(), col.end(),
                                   [](const Value& a, const Value& b) { return compare_values(a, b) == 0; });
            t.columns.emplace_back(rel.columns[c], static_cast<std::int64_t>(end - col.begin()));
        }
        raw.push_back(std::move(t));
    }
    return summarize_schema(raw);
}

// ---------------------------------------------------------------------------
// simulator

SimulatedCost simulate_execution(const PlanCandidate& candidate, const QueryIR& original, const SchemaModel& schema,
                                 const ResourceSnapshot& resources, std::uint64_t seed, const SimulatorConfig& config) {
    const QueryIR& ir = candidate.ir;
    SimulatedCost cost;
    std::vector<std::string> prefix;
    std::size_t width = 0;
    for (const auto& ref : ir.base_tables) {
        const EntryEstimate e = estimate_entry(ref, schema);
        cost.base_work += e.scan_rows;
        cost.max_intermediate = std::max(cost.max_intermediate, e.output_rows);
        width += e.width;
    }
    for (std::size_t k = 0; k < ir.base_tables.size(); ++k) {
        prefix.push_back(ir.base_tables[k].alias);
        if (k == 0) continue;
        const double card = estimate_cardinality(prefix, ir, schema, PredicateScope::pushed_only);
        cost.base_work += card;
        cost.max_intermediate = std::max(cost.max_intermediate, card);
    }
    cost.max_width = width;

    const double u = rng::to_unit(rng::mix(seed, rng::hash_string(render_sql(original))));
    const double eps = config.noise * (2.0 * u - 1.0);
    cost.latency_ms = config.alpha_ms_per_row * cost.base_work * (1.0 + config.beta_cpu * resources.cpu_load) * (1.0 + eps);
    cost.memory_bytes = config.gamma_mem * cost.max_intermediate * config.bytes_per_column *
                            static_cast<double>(cost.max_width) +
                        resources.memory_in_use;
    return cost;
}

SimulatorAdapter::SimulatorAdapter(const SchemaModel& schema, SimulatorConfig config)
    : schema_(schema), config_(std::move(config)) {}

Measurement SimulatorAdapter::execute(const ExecutionRequest& request) {
    const SimulatedCost c =
        simulate_execution(request.candidate, request.original, schema_, request.resources, request.seed, config_);
    return {c.latency_ms, c.memory_bytes, !check_feasible(c.latency_ms, c.memory_bytes, request.constraints)};
}

CommandAdapter::CommandAdapter(std::string command) : command_(std::move(command)) {}

Measurement CommandAdapter::execute(const ExecutionRequest& request) {
    std::lock_guard<std::mutex> lock(mutex_);
    namespace fs = std::filesystem;
    const fs::path sql_file =
        fs::temp_directory_path() / ("qplan_" + std::to_string(rng::hash_string(request.query_id)) + ".sql");
    {
        std::ofstream out(sql_file);
        if (!out) throw ExecutionError(std::string(request.query_id), "cannot write " + sql_file.string());
        out << request.sql << '\n';
    }
    const std::string cmd = "(\n" + command_ + "\n) < '" + sql_file.string() + "'";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) throw ExecutionError(std::string(request.query_id), "cannot start adapter command");
    std::string output;
    char buf[256];
    while (std::fgets(buf, sizeof(buf), pipe) != nullptr) output += buf;
    const int status = ::pclose(pipe);
    std::error_code ec;
    fs::remove(sql_file, ec);
    if (status != 0) {
        throw ExecutionError(std::string(request.query_id), "adapter command exited with status " + std::to_string(status));
    }
    std::istringstream parse(output);
    Measurement m;
    if (!(parse >> m.latency_ms >> m.memory_bytes) || m.latency_ms < 0 || m.memory_bytes < 0) {
        throw ExecutionError(std::string(request.query_id), "adapter output not understood: " + output);
    }
    m.resource_violation = !check_feasible(m.latency_ms, m.memory_bytes, request.constraints);
    return m;
}

}  // namespace qplan
