#include <sstream>

#include "doctest.h"
#include "qplan/acceptance.hpp"
#include "qplan/error.hpp"
#include "qplan/harness.hpp"
#include "qplan/query_ir.hpp"
#include "qplan/rng.hpp"
#include "qplan/schema.hpp"
#include "support.hpp"

using namespace qplan;

TEST_SUITE("schema") {
    TEST_CASE("distinct counts clamp to the row count") {
        const auto s = summarize_schema({{"t", 10, {{"k", 50}, {"v", 3}}}});
        CHECK(s.at("t").find_column("k")->distinct_count == 10);
        CHECK(s.at("t").find_column("v")->distinct_count == 3);
        CHECK(s.at("t").column_index("v") == 1);
        CHECK(s.find("missing") == nullptr);
    }

    TEST_CASE("duplicate names and negative counts are rejected") {
        CHECK_THROWS_AS(summarize_schema({{"t", 1, {{"k", 1}}}, {"t", 2, {{"k", 1}}}}), SchemaError);
        CHECK_THROWS_AS(summarize_schema({{"t", 1, {{"k", 1}, {"k", 1}}}}), SchemaError);
        CHECK_THROWS_AS(summarize_schema({{"t", -1, {{"k", 1}}}}), SchemaError);
    }

    TEST_CASE("jsonl round trip") {
        const auto s = testing::chain_schema();
        std::stringstream io;
        write_schema_jsonl(s, io);
        CHECK(read_schema_jsonl(io) == s);
    }
}

TEST_SUITE("rng") {
    TEST_CASE("streams are reproducible and seeds separate") {
        rng::Stream a(7), b(7), c(8);
        for (int i = 0; i < 5; ++i) {
            const auto x = a.next();
            CHECK(x == b.next());
            CHECK(x != c.next());
        }
        CHECK(rng::hash_string("q0001") != rng::hash_string("q0002"));
    }

    TEST_CASE("unit draws stay in [0, 1)") {
        rng::Stream s(3);
        for (int i = 0; i < 1000; ++i) {
            const double u = s.uniform();
            CHECK(u >= 0.0);
            CHECK(u < 1.0);
        }
    }
}

TEST_SUITE("query_ir") {
    TEST_CASE("parse fills every IR field") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql(
            "SELECT t.y, SUM(t.x), COUNT(*) FROM a t JOIN b u ON t.id = u.aid WHERE t.x > 5 AND u.z = 'k' "
            "GROUP BY t.y ORDER BY t.y DESC LIMIT 4",
            s);
        REQUIRE(ir.projections.size() == 3);
        CHECK_FALSE(ir.projections[0].is_aggregate());
        CHECK(ir.projections[1].agg == AggFunc::sum);
        CHECK(ir.projections[2].agg == AggFunc::count);
        CHECK_FALSE(ir.projections[2].column.has_value());
        REQUIRE(ir.base_tables.size() == 2);
        CHECK(ir.base_tables[0].table == "a");
        CHECK(ir.base_tables[1].alias == "u");
        REQUIRE(ir.joins.size() == 1);
        CHECK(ir.joins[0].left == ColumnRef{"t", "id"});
        CHECK(ir.joins[0].right == ColumnRef{"u", "aid"});
        REQUIRE(ir.predicates.size() == 2);
        CHECK(ir.predicates[0].op == CompareOp::gt);
        CHECK(std::get<std::int64_t>(ir.predicates[0].value) == 5);
        CHECK(std::get<std::string>(ir.predicates[1].value) == "k");
        CHECK(ir.group_by == std::vector<ColumnRef>{{"t", "y"}});
        CHECK(ir.order_by == std::vector<ColumnRef>{{"t", "y"}});
        CHECK(ir.order_direction == SortDirection::desc);
        CHECK(ir.limit == 4);
        CHECK_FALSE(ir.sample_rate.has_value());
    }

    TEST_CASE("keywords are case-insensitive and literals keep their type") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("select t.id from a t where t.x <= 2.5 and t.y <> -3 limit 1", s);
        CHECK(std::get<double>(ir.predicates[0].value) == doctest::Approx(2.5));
        CHECK(ir.predicates[1].op == CompareOp::ne);
        CHECK(std::get<std::int64_t>(ir.predicates[1].value) == -3);
    }

    TEST_CASE("render then parse is the identity on the fixture corpus") {
        for (const auto& f : load_fixtures(testing::fixture_dir())) {
            for (const auto& sql : f.queries) {
                CAPTURE(sql);
                const QueryIR ir = parse_sql(sql, f.schema);
                CHECK(parse_sql(render_sql(ir), f.schema) == ir);
            }
        }
    }

    TEST_CASE("render then parse is the identity on generated workloads") {
        WorkloadProfile p;
        p.n_queries = 64;
        const Workload w = generate_workload(p, 5);
        for (const auto& q : w.queries) {
            const QueryIR ir = parse_sql(q.sql, w.schema);
            CHECK(parse_sql(render_sql(ir), w.schema) == ir);
        }
    }

    TEST_CASE("sample rate renders as a sample clause") {
        const auto s = testing::chain_schema();
        QueryIR ir = parse_sql("SELECT t.id FROM a t", s);
        ir.sample_rate = 0.1;
        const std::string sql = render_sql(ir);
        CHECK(sql.find("TABLESAMPLE") != std::string::npos);
        CHECK(sql.find("(10)") != std::string::npos);
    }

    TEST_CASE("syntax errors") {
        const auto s = testing::chain_schema();
        CHECK_THROWS_AS(parse_sql("", s), ParseError);
        CHECK_THROWS_AS(parse_sql("SELEC t.id FROM a t", s), ParseError);
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM a t WHERE", s), ParseError);
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM a t WHERE t.x = 'open", s), ParseError);
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM a t LIMIT x", s), ParseError);
    }

    TEST_CASE("unknown identifiers") {
        const auto s = testing::chain_schema();
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM nope t", s), UnknownIdentifierError);
        CHECK_THROWS_AS(parse_sql("SELECT t.nope FROM a t", s), UnknownIdentifierError);
        CHECK_THROWS_AS(parse_sql("SELECT q.id FROM a t", s), UnknownIdentifierError);
    }

    TEST_CASE("constructs outside the subset") {
        const auto s = testing::chain_schema();
        CHECK_THROWS_AS(parse_sql("SELECT * FROM a t", s), UnsupportedConstructError);
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM a t WHERE t.x = 1 OR t.y = 2", s), UnsupportedConstructError);
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM a t WHERE t.x = t.y", s), UnsupportedConstructError);
        CHECK_THROWS_AS(parse_sql("SELECT DISTINCT t.id FROM a t", s), UnsupportedConstructError);
        CHECK_THROWS_AS(parse_sql("SELECT t.y, COUNT(*) FROM a t GROUP BY t.y HAVING COUNT(*) > 1", s),
                        UnsupportedConstructError);
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM a t LEFT JOIN b u ON t.id = u.aid", s), UnsupportedConstructError);
    }

    TEST_CASE("invariant violations") {
        const auto s = testing::chain_schema();
        CHECK_THROWS_AS(parse_sql("SELECT t.id, COUNT(*) FROM a t", s), InvalidQueryError);
        CHECK_THROWS_AS(parse_sql("SELECT t.y, COUNT(*) FROM a t GROUP BY t.y ORDER BY t.x", s), InvalidQueryError);
        CHECK_THROWS_AS(parse_sql("SELECT t.id FROM a t JOIN b t ON t.id = t.aid", s), InvalidQueryError);
    }

    TEST_CASE("complexity counts") {
        const auto s = testing::chain_schema();
        const auto one = complexity(parse_sql("SELECT t.id FROM a t", s));
        CHECK(one == ComplexityMetrics{1, 0, 0});
        const auto three = complexity(parse_sql(
            "SELECT t.id FROM a t JOIN b u ON t.id = u.aid JOIN c v ON u.id = v.bid WHERE t.x > 1 AND v.w = 1 AND u.z < 3",
            s));
        CHECK(three == ComplexityMetrics{3, 2, 3});
    }

    TEST_CASE("validate accepts parsed queries and rejects broken joins") {
        const auto s = testing::chain_schema();
        QueryIR ir = parse_sql("SELECT t.id FROM a t JOIN b u ON t.id = u.aid", s);
        CHECK_NOTHROW(validate(ir, s));
        ir.joins.clear();
        CHECK_THROWS_AS(validate(ir, s), InvalidQueryError);
    }

    TEST_CASE("exposed columns of a base table follow the schema") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.id FROM a t", s);
        CHECK(exposed_columns(ir.base_tables[0], s) == std::vector<std::string>{"id", "x", "y"});
    }
}
