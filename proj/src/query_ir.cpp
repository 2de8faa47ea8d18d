#include "qplan/query_ir.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

#include "qplan/error.hpp"

namespace qplan {

std::string_view to_string(AggFunc f) {
    switch (f) {
        case AggFunc::count: return "COUNT";
        case AggFunc::sum: return "SUM";
        case AggFunc::avg: return "AVG";
        case AggFunc::min: return "MIN";
        case AggFunc::max: return "MAX";
    }
    return "?";
}

std::string_view to_string(CompareOp op) {
    switch (op) {
        case CompareOp::eq: return "=";
        case CompareOp::lt: return "<";
        case CompareOp::gt: return ">";
        case CompareOp::le: return "<=";
        case CompareOp::ge: return ">=";
        case CompareOp::ne: return "<>";
    }
    return "?";
}

bool TableRef::operator==(const TableRef& other) const {
    if (table != other.table || alias != other.alias) return false;
    if (is_derived() != other.is_derived()) return false;
    return !is_derived() || *derived == *other.derived;
}

bool QueryIR::has_aggregates() const {
    return std::any_of(projections.begin(), projections.end(), [](const SelectItem& s) { return s.is_aggregate(); });
}

const TableRef* QueryIR::find_alias(std::string_view alias) const {
    for (const auto& t : base_tables) {
        if (t.alias == alias) return &t;
    }
    return nullptr;
}

std::optional<std::size_t> QueryIR::alias_position(std::string_view alias) const {
    for (std::size_t i = 0; i < base_tables.size(); ++i) {
        if (base_tables[i].alias == alias) return i;
    }
    return std::nullopt;
}

ComplexityMetrics complexity(const QueryIR& ir) {
    return {static_cast<std::int64_t>(ir.base_tables.size()), static_cast<std::int64_t>(ir.joins.size()),
            static_cast<std::int64_t>(ir.predicates.size())};
}

// ---------------------------------------------------------------------------
// lexer

namespace {

enum class TokKind { word, integer, decimal, string, symbol, end };

struct Token {
    TokKind kind = TokKind::end;
    std::string text;
    std::size_t pos = 0;
};

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::vector<Token> tokenize(std::string_view in) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < in.size()) {
        const char c = in[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            while (i < in.size() && (std::isalnum(static_cast<unsigned char>(in[i])) || in[i] == '_')) ++i;
            out.push_back({TokKind::word, std::string(in.substr(start, i - start)), start});
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            while (i < in.size() && std::isdigit(static_cast<unsigned char>(in[i]))) ++i;
            TokKind kind = TokKind::integer;
            if (i + 1 < in.size() && in[i] == '.' && std::isdigit(static_cast<unsigned char>(in[i + 1]))) {
                ++i;
                while (i < in.size() && std::isdigit(static_cast<unsigned char>(in[i]))) ++i;
                kind = TokKind::decimal;
            }
            out.push_back({kind, std::string(in.substr(start, i - start)), start});
        } else if (c == '\'') {
            std::string value;
            ++i;
            bool closed = false;
            while (i < in.size()) {
                if (in[i] == '\'') {
                    if (i + 1 < in.size() && in[i + 1] == '\'') {
                        value.push_back('\'');
                        i += 2;
                        continue;
                    }
                    ++i;
                    closed = true;
                    break;
                }
                value.push_back(in[i++]);
            }
            if (!closed) throw ParseError(start, "closing quote", "end of input");
            out.push_back({TokKind::string, std::move(value), start});
        } else if ((c == '<' || c == '>') && i + 1 < in.size() && (in[i + 1] == '=' || (c == '<' && in[i + 1] == '>'))) {
            out.push_back({TokKind::symbol, std::string(in.substr(i, 2)), start});
            i += 2;
        } else if (std::string_view(",.()*=<>;-").find(c) != std::string_view::npos) {
            out.push_back({TokKind::symbol, std::string(1, c), start});
            ++i;
        } else {
            throw ParseError(start, "token", std::string("'") + c + "'");
        }
    }
    out.push_back({TokKind::end, "", in.size()});
    return out;
}

const std::set<std::string>& reserved_words() {
    static const std::set<std::string> words = {
        "SELECT", "FROM", "JOIN", "ON",  "WHERE", "AND", "GROUP", "BY", "ORDER", "ASC", "DESC", "LIMIT", "AS", "INNER",
        // recognised only to be rejected with a named construct
        "OR", "NOT", "LIKE", "IN", "BETWEEN", "IS", "NULL", "HAVING", "DISTINCT", "UNION", "LEFT", "RIGHT", "FULL",
        "OUTER", "CROSS", "EXISTS", "CASE", "OFFSET", "USING", "WITH", "NATURAL", "INTERSECT", "EXCEPT", "TABLESAMPLE"};
    return words;
}

const std::set<std::string>& unsupported_words() {
    static const std::set<std::string> words = {
        "OR",        "NOT",   "LIKE",    "IN",     "BETWEEN", "IS",     "NULL",   "HAVING",
        "DISTINCT",  "UNION", "LEFT",    "RIGHT",  "FULL",    "OUTER",  "CROSS",  "EXISTS",
        "CASE",      "OFFSET", "USING",  "WITH",   "NATURAL", "INTERSECT", "EXCEPT", "TABLESAMPLE"};
    return words;
}

std::optional<AggFunc> agg_from_word(std::string_view w) {
    const std::string u = upper(w);
    if (u == "COUNT") return AggFunc::count;
    if (u == "SUM") return AggFunc::sum;
    if (u == "AVG") return AggFunc::avg;
    if (u == "MIN") return AggFunc::min;
    if (u == "MAX") return AggFunc::max;
    return std::nullopt;
}

class Parser {
public:
    explicit Parser(std::string_view text) : toks_(tokenize(text)) {}

    QueryIR parse_query() {
        QueryIR ir;
        expect_keyword("SELECT");
        if (is_keyword("DISTINCT")) throw UnsupportedConstructError("DISTINCT");
        if (is_symbol("*")) throw UnsupportedConstructError("SELECT *");
        ir.projections.push_back(parse_item());
        while (accept_symbol(",")) ir.projections.push_back(parse_item());

        expect_keyword("FROM");
        ir.base_tables.push_back(parse_table_ref());
        while (true) {
            if (is_symbol(",")) throw UnsupportedConstructError("comma join");
            if (accept_keyword("INNER")) {
                expect_keyword("JOIN");
            } else if (!accept_keyword("JOIN")) {
                break;
            }
            ir.base_tables.push_back(parse_table_ref());
            expect_keyword("ON");
            JoinCondition jc;
            jc.left = parse_column();
            if (!accept_symbol("=")) {
                reject_unsupported();
                throw error("'=' in join condition");
            }
            jc.right = parse_column();
            if (is_keyword("AND")) throw UnsupportedConstructError("multi-column join condition");
            ir.joins.push_back(std::move(jc));
        }

        if (accept_keyword("WHERE")) {
            ir.predicates.push_back(parse_predicate());
            while (accept_keyword("AND")) ir.predicates.push_back(parse_predicate());
        }
        if (accept_keyword("GROUP")) {
            expect_keyword("BY");
            ir.group_by.push_back(parse_column());
            while (accept_symbol(",")) ir.group_by.push_back(parse_column());
        }
        if (is_keyword("HAVING")) throw UnsupportedConstructError("HAVING");
        if (accept_keyword("ORDER")) {
            expect_keyword("BY");
            ir.order_by.push_back(parse_column());
            while (accept_symbol(",")) ir.order_by.push_back(parse_column());
            if (accept_keyword("DESC")) {
                ir.order_direction = SortDirection::desc;
            } else {
                accept_keyword("ASC");
            }
        }
        if (accept_keyword("LIMIT")) {
            const Token& t = peek();
            if (t.kind != TokKind::integer) throw error("non-negative integer after LIMIT");
            ir.limit = parse_int(t);
            ++pos_;
        }
        accept_symbol(";");
        if (peek().kind != TokKind::end) {
            reject_unsupported();
            throw error("end of query");
        }
        return ir;
    }

private:
    const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }

    bool is_keyword(std::string_view kw, std::size_t ahead = 0) const {
        const Token& t = peek(ahead);
        return t.kind == TokKind::word && upper(t.text) == kw;
    }
    bool is_symbol(std::string_view s, std::size_t ahead = 0) const {
        const Token& t = peek(ahead);
        return t.kind == TokKind::symbol && t.text == s;
    }
    bool accept_keyword(std::string_view kw) {
        if (!is_keyword(kw)) return false;
        ++pos_;
        return true;
    }
    bool accept_symbol(std::string_view s) {
        if (!is_symbol(s)) return false;
        ++pos_;
        return true;
    }
    void expect_keyword(std::string_view kw) {
        if (!accept_keyword(kw)) {
            reject_unsupported();
            throw error(std::string(kw));
        }
    }

    ParseError error(std::string expected) const {
        const Token& t = peek();
        std::string found = t.kind == TokKind::end ? "end of input" : "'" + t.text + "'";
        return ParseError(t.pos, std::move(expected), std::move(found));
    }

    void reject_unsupported() const {
        const Token& t = peek();
        if (t.kind == TokKind::word && unsupported_words().count(upper(t.text)) != 0) {
            throw UnsupportedConstructError(upper(t.text));
        }
        if (t.kind == TokKind::symbol && t.text == "(") throw UnsupportedConstructError("subquery");
    }

    std::string parse_identifier(const char* what) {
        const Token& t = peek();
        if (t.kind != TokKind::word || reserved_words().count(upper(t.text)) != 0) {
            reject_unsupported();
            throw error(what);
        }
        ++pos_;
        return t.text;
    }

    ColumnRef parse_column() {
        ColumnRef c;
        c.alias = parse_identifier("column reference");
        if (!accept_symbol(".")) throw error("'.' in qualified column");
        const Token& t = peek();
        if (t.kind != TokKind::word) throw error("column name");
        c.column = t.text;
        ++pos_;
        return c;
    }

    SelectItem parse_item() {
        SelectItem item;
        if (peek().kind == TokKind::word && is_symbol("(", 1)) {
            auto agg = agg_from_word(peek().text);
            if (!agg) throw UnsupportedConstructError("function " + upper(peek().text));
            pos_ += 2;
            item.agg = agg;
            if (accept_symbol("*")) {
                if (*agg != AggFunc::count) throw error("column argument for " + std::string(to_string(*agg)));
            } else {
                if (is_keyword("DISTINCT")) throw UnsupportedConstructError("DISTINCT");
                item.column = parse_column();
            }
            if (!accept_symbol(")")) throw error("')'");
            return item;
        }
        if (is_symbol("(")) throw UnsupportedConstructError("expression projection");
        item.column = parse_column();
        if (is_keyword("AS")) throw UnsupportedConstructError("projection alias");
        return item;
    }

    TableRef parse_table_ref() {
        if (is_symbol("(")) throw UnsupportedConstructError("subquery");
        TableRef ref;
        ref.table = parse_identifier("table name");
        accept_keyword("AS");
        ref.alias = parse_identifier("table alias");
        return ref;
    }

    static std::int64_t parse_int(const Token& t) {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
        if (ec != std::errc() || p != t.text.data() + t.text.size()) {
            throw ParseError(t.pos, "integer within range", "'" + t.text + "'");
        }
        return v;
    }

    Literal parse_literal() {
        const bool negative = accept_symbol("-");
        const Token& t = peek();
        if (t.kind == TokKind::integer) {
            ++pos_;
            const std::int64_t v = parse_int(t);
            return negative ? -v : v;
        }
        if (t.kind == TokKind::decimal) {
            ++pos_;
            double v = 0;
            std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
            return negative ? -v : v;
        }
        if (t.kind == TokKind::string && !negative) {
            ++pos_;
            return t.text;
        }
        if (!negative && t.kind == TokKind::word && is_symbol(".", 1)) {
            throw UnsupportedConstructError("column-to-column predicate");
        }
        reject_unsupported();
        throw error("literal");
    }

    Predicate parse_predicate() {
        if (is_symbol("(")) throw UnsupportedConstructError("parenthesized predicate");
        if (is_keyword("NOT")) throw UnsupportedConstructError("NOT");
        Predicate p;
        p.column = parse_column();
        const Token& t = peek();
        static const std::pair<std::string_view, CompareOp> ops[] = {
            {"=", CompareOp::eq}, {"<", CompareOp::lt},  {">", CompareOp::gt},
            {"<=", CompareOp::le}, {">=", CompareOp::ge}, {"<>", CompareOp::ne}};
        bool found = false;
        if (t.kind == TokKind::symbol) {
            for (const auto& [text, op] : ops) {
                if (t.text == text) {
                    p.op = op;
                    found = true;
                }
            }
        }
        if (!found) {
            reject_unsupported();
            throw error("comparison operator");
        }
        ++pos_;
        p.value = parse_literal();
        if (is_keyword("OR")) throw UnsupportedConstructError("OR");
        return p;
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// validation

struct ScopeEntry {
    std::string alias;
    std::vector<std::string> columns;
};

class Validator {
public:
    explicit Validator(const SchemaModel& schema) : schema_(schema) {}

    void run(const QueryIR& ir) {
        if (ir.base_tables.empty()) throw InvalidQueryError("query has no FROM entries");
        if (ir.projections.empty()) throw InvalidQueryError("query has no projections");

        std::vector<ScopeEntry> scope;
        for (const auto& ref : ir.base_tables) {
            if (ref.alias.empty()) throw InvalidQueryError("empty table alias");
            for (const auto& s : scope) {
                if (s.alias == ref.alias) throw InvalidQueryError("duplicate alias: " + ref.alias);
            }
            if (schema_.find(ref.table) == nullptr) throw UnknownIdentifierError("table", ref.table);
            if (ref.is_derived()) check_derived(ref);
            scope.push_back({ref.alias, exposed_columns(ref, schema_)});
        }

        if (ir.joins.size() + 1 != ir.base_tables.size()) {
            throw InvalidQueryError("join list does not connect every table");
        }
        for (std::size_t i = 0; i < ir.joins.size(); ++i) {
            const auto& jc = ir.joins[i];
            resolve(scope, jc.left);
            resolve(scope, jc.right);
            const std::string& joined = ir.base_tables[i + 1].alias;
            const auto earlier = [&](const std::string& alias) {
                auto p = ir.alias_position(alias);
                return p && *p <= i;
            };
            const bool ok = (jc.left.alias == joined && earlier(jc.right.alias)) ||
                            (jc.right.alias == joined && earlier(jc.left.alias));
            if (!ok) {
                throw UnsupportedConstructError("join condition that does not link " + joined + " to an earlier table");
            }
        }

        for (const auto& item : ir.projections) {
            if (item.column) resolve(scope, *item.column);
            if (item.divisor) {
                resolve(scope, *item.divisor);
                if (item.agg != AggFunc::sum) throw InvalidQueryError("ratio projection must be SUM / SUM");
            }
            if (item.agg && *item.agg != AggFunc::count && !item.column) {
                throw InvalidQueryError(std::string(to_string(*item.agg)) + " requires a column");
            }
        }
        for (const auto& p : ir.predicates) resolve(scope, p.column);
        for (const auto& c : ir.group_by) resolve(scope, c);
        for (const auto& c : ir.order_by) resolve(scope, c);

        const bool aggregated = ir.has_aggregates() || !ir.group_by.empty();
        if (aggregated) {
            const auto in_group = [&](const ColumnRef& c) {
                return std::find(ir.group_by.begin(), ir.group_by.end(), c) != ir.group_by.end();
            };
            for (const auto& item : ir.projections) {
                if (!item.is_aggregate() && !in_group(*item.column)) {
                    throw InvalidQueryError("column " + item.column->alias + "." + item.column->column +
                                            " must appear in GROUP BY");
                }
            }
            for (const auto& c : ir.order_by) {
                if (!in_group(c)) {
                    throw InvalidQueryError("ORDER BY column " + c.alias + "." + c.column + " must appear in GROUP BY");
                }
            }
        }
        if (ir.limit && *ir.limit < 0) throw InvalidQueryError("negative LIMIT");
        if (ir.sample_rate) {
            if (!(*ir.sample_rate > 0.0 && *ir.sample_rate <= 1.0)) throw InvalidQueryError("sample rate outside (0,1]");
            if (ir.base_tables.size() != 1) throw InvalidQueryError("sampling requires a single-table query");
        }
    }

private:
    void check_derived(const TableRef& ref) {
        const QueryIR& sub = *ref.derived;
        if (sub.base_tables.size() != 1 || sub.base_tables[0].is_derived() || sub.base_tables[0].table != ref.table) {
            throw InvalidQueryError("derived table " + ref.alias + " must be a single-table subquery over " + ref.table);
        }
        Validator(schema_).run(sub);
        std::unordered_set<std::string> names;
        for (const auto& item : sub.projections) {
            if (!names.insert(output_name(item)).second) {
                throw InvalidQueryError("duplicate output column " + output_name(item) + " in derived table " + ref.alias);
            }
        }
    }

    static void resolve(const std::vector<ScopeEntry>& scope, const ColumnRef& c) {
        for (const auto& s : scope) {
            if (s.alias != c.alias) continue;
            if (std::find(s.columns.begin(), s.columns.end(), c.column) == s.columns.end()) {
                throw UnknownIdentifierError("column", c.alias + "." + c.column);
            }
            return;
        }
        throw UnknownIdentifierError("alias", c.alias);
    }

    const SchemaModel& schema_;
};

}  // namespace

std::string output_name(const SelectItem& item) {
    if (!item.name.empty()) return item.name;
    if (!item.agg) return item.column->column;
    std::string n = upper(to_string(*item.agg));
    for (auto& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return n + "_" + (item.column ? item.column->column : std::string("star"));
}

std::vector<std::string> exposed_columns(const TableRef& ref, const SchemaModel& schema) {
    std::vector<std::string> out;
    if (ref.is_derived()) {
        for (const auto& item : ref.derived->projections) out.push_back(output_name(item));
        return out;
    }
    for (const auto& c : schema.at(ref.table).columns) out.push_back(c.name);
    return out;
}

void validate(const QueryIR& ir, const SchemaModel& schema) { Validator(schema).run(ir); }

QueryIR parse_sql(std::string_view text, const SchemaModel& schema) {
    QueryIR ir = Parser(text).parse_query();
    validate(ir, schema);
    return ir;
}

// ---------------------------------------------------------------------------
// rendering

std::string render_literal(const Literal& value) {
    if (const auto* i = std::get_if<std::int64_t>(&value)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&value)) {
        char buf[64];
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), *d, std::chars_format::fixed);
        std::string s(buf, p);
        if (s.find('.') == std::string::npos) s += ".0";
        return s;
    }
    std::string out = "'";
    for (char c : std::get<std::string>(value)) {
        if (c == '\'') out += '\'';
        out += c;
    }
    return out + "'";
}

namespace {

std::string render_column(const ColumnRef& c) { return c.alias + "." + c.column; }

std::string render_item(const SelectItem& item) {
    std::string s;
    if (!item.agg) {
        s = render_column(*item.column);
    } else {
        const std::string fn(to_string(*item.agg));
        s = fn + "(" + (item.column ? render_column(*item.column) : "*") + ")";
        if (item.divisor) s += " / " + fn + "(" + render_column(*item.divisor) + ")";
    }
    if (!item.name.empty()) s += " AS " + item.name;
    return s;
}

std::string render_ref(const TableRef& ref) {
    if (ref.is_derived()) return "(" + render_sql(*ref.derived) + ") AS " + ref.alias;
    return ref.table + " AS " + ref.alias;
}

std::string render_percent(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", rate * 100.0);
    return buf;
}

}  // namespace

std::string render_sql(const QueryIR& ir) {
    std::string s = "SELECT ";
    for (std::size_t i = 0; i < ir.projections.size(); ++i) {
        if (i) s += ", ";
        s += render_item(ir.projections[i]);
    }
    s += " FROM ";
    if (!ir.base_tables.empty()) s += render_ref(ir.base_tables[0]);
    if (ir.sample_rate) s += " TABLESAMPLE BERNOULLI (" + render_percent(*ir.sample_rate) + ")";
    for (std::size_t i = 0; i < ir.joins.size() && i + 1 < ir.base_tables.size(); ++i) {
        s += " JOIN " + render_ref(ir.base_tables[i + 1]) + " ON " + render_column(ir.joins[i].left) + " = " +
             render_column(ir.joins[i].right);
    }
    for (std::size_t i = 0; i < ir.predicates.size(); ++i) {
        const auto& p = ir.predicates[i];
        s += i ? " AND " : " WHERE ";
        s += render_column(p.column) + " " + std::string(to_string(p.op)) + " " + render_literal(p.value);
    }
    for (std::size_t i = 0; i < ir.group_by.size(); ++i) {
        s += i ? ", " : " GROUP BY ";
        s += render_column(ir.group_by[i]);
    }
    for (std::size_t i = 0; i < ir.order_by.size(); ++i) {
        s += i ? ", " : " ORDER BY ";
        s += render_column(ir.order_by[i]);
    }
    if (!ir.order_by.empty() && ir.order_direction == SortDirection::desc) s += " DESC";
    if (ir.limit) s += " LIMIT " + std::to_string(*ir.limit);
    return s;
}

}  // namespace qplan
