#include "qplan/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "qplan/error.hpp"

namespace qplan {

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::early_filter: return "early_filter";
        case Strategy::projection_pushdown: return "projection_pushdown";
        case Strategy::pre_aggregation: return "pre_aggregation";
        case Strategy::join_reorder: return "join_reorder";
        case Strategy::sampling: return "sampling";
        case Strategy::limit_pushdown: return "limit_pushdown";
    }
    return "?";
}

PlanConfig PlanConfig::from_arm(int arm) {
    if (arm < 0 || arm >= kArmCount) throw PreconditionError("arm index out of range: " + std::to_string(arm));
    return PlanConfig(static_cast<std::uint8_t>(arm));
}

PlanConfig PlanConfig::with(Strategy s, bool on) const {
    const auto mask = static_cast<std::uint8_t>(1u << static_cast<int>(s));
    return PlanConfig(static_cast<std::uint8_t>(on ? (bits_ | mask) : (bits_ & ~mask)));
}

std::string PlanConfig::bitstring() const {
    std::string s(kStrategyCount, '0');
    for (std::size_t i = 0; i < kStrategyCount; ++i) {
        if ((bits_ >> i) & 1) s[kStrategyCount - 1 - i] = '1';
    }
    return s;
}

std::array<PlanConfig, kArmCount> enumerate_configs() {
    std::array<PlanConfig, kArmCount> out{};
    for (int i = 0; i < kArmCount; ++i) out[static_cast<std::size_t>(i)] = PlanConfig::from_arm(i);
    return out;
}

namespace {

QueryIR make_scan(const TableRef& ref, const SchemaModel& schema) {
    QueryIR sub;
    for (const auto& c : schema.at(ref.table).columns) {
        SelectItem item;
        item.column = ColumnRef{ref.alias, c.name};
        sub.projections.push_back(std::move(item));
    }
    sub.base_tables.push_back(TableRef{ref.table, ref.alias, nullptr});
    return sub;
}

// Mutable copy of the subquery behind `ref`, creating a full scan if needed.
QueryIR derived_copy(const TableRef& ref, const SchemaModel& schema) {
    return ref.is_derived() ? *ref.derived : make_scan(ref, schema);
}

void set_derived(TableRef& ref, QueryIR sub) { ref.derived = std::make_shared<const QueryIR>(std::move(sub)); }

bool is_plain_scan(const QueryIR& sub) {
    return sub.group_by.empty() && !sub.has_aggregates() && !sub.limit;
}

// Whether an outer reference to `column` on a derived entry names a base column.
bool exposes_base_column(const QueryIR& sub, const std::string& column) {
    return std::any_of(sub.projections.begin(), sub.projections.end(), [&](const SelectItem& s) {
        return !s.agg && s.column->column == column && (s.name.empty() || s.name == column);
    });
}

// Columns of `alias` referenced by the outer query, in first-use order.
std::vector<std::string> referenced_columns(const QueryIR& ir, const std::string& alias) {
    std::vector<std::string> out;
    const auto add = [&](const ColumnRef& c) {
        if (c.alias == alias && std::find(out.begin(), out.end(), c.column) == out.end()) out.push_back(c.column);
    };
    for (const auto& item : ir.projections) {
        if (item.column) add(*item.column);
        if (item.divisor) add(*item.divisor);
    }
    for (const auto& j : ir.joins) {
        add(j.left);
        add(j.right);
    }
    for (const auto& p : ir.predicates) add(p.column);
    for (const auto& c : ir.group_by) add(c);
    for (const auto& c : ir.order_by) add(c);
    return out;
}

}  // namespace

QueryIR rewrite_early_filter(const QueryIR& ir, const SchemaModel& schema) {
    QueryIR out = ir;
    out.predicates.clear();
    std::vector<std::vector<Predicate>> pushed(ir.base_tables.size());
    for (const auto& p : ir.predicates) {
        const auto pos = ir.alias_position(p.column.alias);
        const TableRef& ref = ir.base_tables[*pos];
        const bool pushable =
            !ref.is_derived() || (is_plain_scan(*ref.derived) && exposes_base_column(*ref.derived, p.column.column));
        if (pushable) {
            pushed[*pos].push_back(p);
        } else {
            out.predicates.push_back(p);
        }
    }
    for (std::size_t i = 0; i < pushed.size(); ++i) {
        if (pushed[i].empty()) continue;
        QueryIR sub = derived_copy(out.base_tables[i], schema);
        for (auto& p : pushed[i]) sub.predicates.push_back(std::move(p));
        set_derived(out.base_tables[i], std::move(sub));
    }
    return out;
}

QueryIR rewrite_projection_pushdown(const QueryIR& ir, const SchemaModel& schema) {
    QueryIR out = ir;
    for (auto& ref : out.base_tables) {
        if (ref.is_derived() && !is_plain_scan(*ref.derived)) continue;
        const std::vector<std::string> used = referenced_columns(ir, ref.alias);
        const std::vector<std::string> exposed = exposed_columns(ref, schema);
        std::vector<std::string> keep;
        for (const auto& c : exposed) {
            if (std::find(used.begin(), used.end(), c) != used.end()) keep.push_back(c);
        }
        // COUNT(*)-only access still needs one column to carry rows.
        if (keep.empty() && !exposed.empty()) keep.push_back(exposed.front());
        if (keep.size() == exposed.size()) continue;

        QueryIR sub = derived_copy(ref, schema);
        std::vector<SelectItem> items;
        for (const auto& item : sub.projections) {
            if (std::find(keep.begin(), keep.end(), output_name(item)) != keep.end()) items.push_back(item);
        }
        sub.projections = std::move(items);
        set_derived(ref, std::move(sub));
    }
    return out;
}

QueryIR rewrite_pre_aggregation(const QueryIR& ir, const SchemaModel& schema) {
    if (ir.group_by.empty() || ir.joins.empty()) return ir;
    const std::string& alias = ir.group_by.front().alias;
    for (const auto& c : ir.group_by) {
        if (c.alias != alias) return ir;
    }
    for (const auto& item : ir.projections) {
        if (item.divisor) return ir;
        if (item.column && item.column->alias != alias) return ir;
    }
    const auto is_key = [&](const ColumnRef& c) {
        return std::find(ir.group_by.begin(), ir.group_by.end(), c) != ir.group_by.end();
    };
    for (const auto& j : ir.joins) {
        if (j.left.alias == alias && !is_key(j.left)) return ir;
        if (j.right.alias == alias && !is_key(j.right)) return ir;
    }
    const std::size_t pos = *ir.alias_position(alias);
    const TableRef& ref = ir.base_tables[pos];
    if (ref.is_derived() && (!is_plain_scan(*ref.derived) || ref.derived->sample_rate)) return ir;

    QueryIR out = ir;
    QueryIR sub = derived_copy(ref, schema);
    const TableStat& table = schema.at(ref.table);

    std::vector<SelectItem> inner;
    std::vector<ColumnRef> inner_keys;
    for (const auto& key : ir.group_by) {
        if (std::find(inner_keys.begin(), inner_keys.end(), key) != inner_keys.end()) continue;
        inner_keys.push_back(key);
        SelectItem item;
        item.column = key;
        inner.push_back(std::move(item));
    }

    int next_partial = 0;
    const auto fresh_name = [&]() {
        std::string name;
        do {
            name = "_agg" + std::to_string(next_partial++);
        } while (table.find_column(name) != nullptr);
        return name;
    };
    const auto add_partial = [&](AggFunc f, const std::optional<ColumnRef>& column) {
        SelectItem item;
        item.agg = f;
        item.column = column;
        item.name = fresh_name();
        inner.push_back(item);
        return ColumnRef{alias, item.name};
    };

    std::vector<SelectItem> outer;
    for (const auto& item : ir.projections) {
        if (!item.agg) {
            outer.push_back(item);
            continue;
        }
        SelectItem combined;
        switch (*item.agg) {
            case AggFunc::count:
            case AggFunc::sum:
                combined.agg = AggFunc::sum;
                combined.column = add_partial(*item.agg, item.column);
                break;
            case AggFunc::min:
            case AggFunc::max:
                combined.agg = item.agg;
                combined.column = add_partial(*item.agg, item.column);
                break;
            case AggFunc::avg:
                combined.agg = AggFunc::sum;
                combined.column = add_partial(AggFunc::sum, item.column);
                combined.divisor = add_partial(AggFunc::count, item.column);
                break;
        }
        outer.push_back(std::move(combined));
    }

    sub.projections = std::move(inner);
    sub.group_by = std::move(inner_keys);
    // Filters on the grouped entry must run before grouping.
    std::vector<Predicate> remaining;
    for (const auto& p : out.predicates) {
        if (p.column.alias == alias) {
            sub.predicates.push_back(p);
        } else {
            remaining.push_back(p);
        }
    }
    out.predicates = std::move(remaining);
    out.projections = std::move(outer);
    set_derived(out.base_tables[pos], std::move(sub));
    return out;
}

QueryIR rewrite_join_reorder(const QueryIR& ir, const SchemaModel& schema) {
    const std::size_t n = ir.base_tables.size();
    if (n < 2) return ir;

    const auto alias_of = [&](std::size_t i) { return ir.base_tables[i].alias; };
    const auto connects = [&](const JoinCondition& j, const std::string& a, const std::string& b) {
        return (j.left.alias == a && j.right.alias == b) || (j.left.alias == b && j.right.alias == a);
    };

    std::vector<std::size_t> order;
    std::vector<std::string> chosen;
    std::vector<bool> used(n, false);

    std::size_t start = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const std::string a = alias_of(i);
        const double est = estimate_cardinality(std::span<const std::string>(&a, 1), ir, schema);
        if (est < best) {
            best = est;
            start = i;
        }
    }
    order.push_back(start);
    chosen.push_back(alias_of(start));
    used[start] = true;

    while (order.size() < n) {
        std::size_t pick = n;
        double pick_est = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            const bool connected = std::any_of(ir.joins.begin(), ir.joins.end(), [&](const JoinCondition& j) {
                return std::any_of(chosen.begin(), chosen.end(),
                                   [&](const std::string& c) { return connects(j, c, alias_of(i)); });
            });
            if (!connected) continue;
            std::vector<std::string> trial = chosen;
            trial.push_back(alias_of(i));
            const double est = estimate_cardinality(trial, ir, schema);
            if (est < pick_est) {
                pick_est = est;
                pick = i;
            }
        }
        if (pick == n) return ir;  // disconnected; cannot happen for valid IR
        order.push_back(pick);
        chosen.push_back(alias_of(pick));
        used[pick] = true;
    }

    QueryIR out = ir;
    out.base_tables.clear();
    out.joins.clear();
    for (std::size_t k = 0; k < n; ++k) {
        out.base_tables.push_back(ir.base_tables[order[k]]);
        if (k == 0) continue;
        const std::string& added = alias_of(order[k]);
        for (const auto& j : ir.joins) {
            const bool hit = std::any_of(chosen.begin(), chosen.begin() + static_cast<std::ptrdiff_t>(k),
                                         [&](const std::string& c) { return connects(j, c, added); });
            if (hit) {
                out.joins.push_back(j);
                break;
            }
        }
    }
    return out;
}

QueryIR rewrite_limit_pushdown(const QueryIR& ir, const SchemaModel& schema) {
    if (!ir.limit || ir.base_tables.size() != 1 || !ir.joins.empty() || !ir.group_by.empty() ||
        !ir.order_by.empty() || ir.has_aggregates()) {
        return ir;
    }
    const TableRef& ref = ir.base_tables[0];
    if (ref.is_derived() && !is_plain_scan(*ref.derived)) return ir;

    QueryIR out = ir;
    QueryIR sub = derived_copy(ref, schema);
    for (const auto& p : out.predicates) sub.predicates.push_back(p);
    out.predicates.clear();
    sub.limit = ir.limit;
    set_derived(out.base_tables[0], std::move(sub));
    return out;
}

QueryIR rewrite_sampling(const QueryIR& ir, const SchemaModel& schema, double rate) {
    if (!(rate > 0.0 && rate <= 1.0)) throw PreconditionError("sampling rate must lie in (0, 1]");
    if (ir.base_tables.empty()) return ir;
    std::size_t largest = 0;
    for (std::size_t i = 1; i < ir.base_tables.size(); ++i) {
        if (schema.at(ir.base_tables[i].table).row_count > schema.at(ir.base_tables[largest].table).row_count) {
            largest = i;
        }
    }
    QueryIR out = ir;
    QueryIR sub = derived_copy(out.base_tables[largest], schema);
    sub.sample_rate = rate;
    set_derived(out.base_tables[largest], std::move(sub));
    return out;
}

PlanCandidate apply_plan(const QueryIR& ir, PlanConfig config, const SchemaModel& schema,
                         const TeacherOptions& options) {
    PlanCandidate cand{config, ir, {}, false};
    const auto step = [&](Strategy s, auto&& rewrite) {
        if (!config.enabled(s)) return;
        QueryIR next = rewrite(cand.ir);
        if (next == cand.ir) return;
        cand.ir = std::move(next);
        cand.applied.push_back(s);
    };
    step(Strategy::early_filter, [&](const QueryIR& q) { return rewrite_early_filter(q, schema); });
    step(Strategy::projection_pushdown, [&](const QueryIR& q) { return rewrite_projection_pushdown(q, schema); });
    step(Strategy::pre_aggregation, [&](const QueryIR& q) { return rewrite_pre_aggregation(q, schema); });
    step(Strategy::join_reorder, [&](const QueryIR& q) { return rewrite_join_reorder(q, schema); });
    step(Strategy::limit_pushdown, [&](const QueryIR& q) { return rewrite_limit_pushdown(q, schema); });
    step(Strategy::sampling, [&](const QueryIR& q) { return rewrite_sampling(q, schema, options.sampling_rate); });
    cand.approximate = config.enabled(Strategy::sampling) &&
                       std::find(cand.applied.begin(), cand.applied.end(), Strategy::sampling) != cand.applied.end();
    return cand;
}

// ---------------------------------------------------------------------------
// estimation

namespace {

double distinct_or_one(const TableStat& table, const std::string& column) {
    const ColumnStat* c = table.find_column(column);
    return c ? std::max<double>(1.0, static_cast<double>(c->distinct_count)) : 1.0;
}

// Distinct count of an outer column reference on `ref`.
double entry_distinct(const TableRef& ref, const std::string& column, const SchemaModel& schema) {
    const TableStat& table = schema.at(ref.table);
    if (!ref.is_derived()) return distinct_or_one(table, column);
    for (const auto& item : ref.derived->projections) {
        if (output_name(item) != column) continue;
        if (!item.agg) return distinct_or_one(table, item.column->column);
        return std::max(1.0, estimate_entry(ref, schema).output_rows);
    }
    return 1.0;
}

}  // namespace

double predicate_selectivity(const Predicate& p, const TableStat& table) {
    const double d = distinct_or_one(table, p.column.column);
    switch (p.op) {
        case CompareOp::eq: return 1.0 / d;
        case CompareOp::ne: return 1.0 - 1.0 / d;
        default: return 1.0 / 3.0;
    }
}

EntryEstimate estimate_entry(const TableRef& ref, const SchemaModel& schema) {
    const TableStat& table = schema.at(ref.table);
    const double rows = static_cast<double>(table.row_count);
    EntryEstimate e;
    if (!ref.is_derived()) {
        e.scan_rows = rows;
        e.output_rows = rows;
        e.width = table.columns.size();
        return e;
    }
    const QueryIR& sub = *ref.derived;
    const double rate = sub.sample_rate.value_or(1.0);
    double sel = 1.0;
    for (const auto& p : sub.predicates) sel *= predicate_selectivity(p, table);

    const double sampled = rows * rate;
    double out = sampled * sel;
    e.scan_rows = sampled;
    if (sub.limit) {
        const double wanted = static_cast<double>(*sub.limit);
        // Early termination once enough qualifying rows were produced.
        if (sub.group_by.empty() && !sub.has_aggregates() && sel > 0.0) {
            e.scan_rows = std::min(sampled, wanted / sel);
        }
        out = std::min(out, wanted);
    }
    if (!sub.group_by.empty()) {
        double groups = 1.0;
        for (const auto& k : sub.group_by) groups *= distinct_or_one(table, k.column);
        out = std::min(out, groups);
    } else if (sub.has_aggregates()) {
        out = std::min(out, 1.0);
    }
    e.output_rows = out;
    e.width = sub.projections.size();
    return e;
}

double estimate_cardinality(std::span<const std::string> aliases, const QueryIR& ir, const SchemaModel& schema,
                            PredicateScope scope) {
    const auto in_set = [&](const std::string& a) { return std::find(aliases.begin(), aliases.end(), a) != aliases.end(); };
    double card = 1.0;
    for (const auto& alias : aliases) {
        const TableRef* ref = ir.find_alias(alias);
        if (ref == nullptr) throw UnknownIdentifierError("alias", alias);
        double rows = estimate_entry(*ref, schema).output_rows;
        if (scope == PredicateScope::all) {
            const TableStat& table = schema.at(ref->table);
            for (const auto& p : ir.predicates) {
                if (p.column.alias == alias) rows *= predicate_selectivity(p, table);
            }
        }
        card *= rows;
    }
    for (const auto& j : ir.joins) {
        if (!in_set(j.left.alias) || !in_set(j.right.alias)) continue;
        const double dl = entry_distinct(*ir.find_alias(j.left.alias), j.left.column, schema);
        const double dr = entry_distinct(*ir.find_alias(j.right.alias), j.right.column, schema);
        card /= std::max(dl, dr);
    }
    return std::max(0.0, card);
}

}  // namespace qplan
