#include <algorithm>

#include "doctest.h"
#include "qplan/error.hpp"
#include "qplan/teacher.hpp"
#include "support.hpp"

using namespace qplan;

namespace {

SchemaModel skewed_schema() {
    return summarize_schema({
        {"big", 1000000, {{"id", 1000000}, {"mid_id", 1000}, {"v", 50}}},
        {"mid", 1000, {{"id", 1000}, {"small_id", 10}, {"k", 20}}},
        {"small", 10, {{"id", 10}, {"tag", 3}}},
    });
}

std::vector<std::string> aliases_of(const QueryIR& ir) {
    std::vector<std::string> out;
    for (const auto& t : ir.base_tables) out.push_back(t.alias);
    return out;
}

// Work of a left-deep order: sum of prefix cardinalities.
double prefix_cost(const QueryIR& ir, const SchemaModel& s) {
    double total = 0;
    std::vector<std::string> prefix;
    for (const auto& t : ir.base_tables) {
        prefix.push_back(t.alias);
        if (prefix.size() > 1) total += estimate_cardinality(prefix, ir, s);
    }
    return total;
}

}  // namespace

TEST_SUITE("plan config") {
    TEST_CASE("arm bits map to strategies") {
        const auto c = PlanConfig::from_arm(5);
        CHECK(c.enabled(Strategy::early_filter));
        CHECK_FALSE(c.enabled(Strategy::projection_pushdown));
        CHECK(c.enabled(Strategy::pre_aggregation));
        CHECK(c.bitstring() == "000101");
        CHECK(PlanConfig::from_arm(0).bitstring() == "000000");
        CHECK(PlanConfig::from_arm(63).bitstring() == "111111");
        CHECK(c.with(Strategy::sampling, true).arm() == 21);
        CHECK(c.with(Strategy::early_filter, false).arm() == 4);
    }

    TEST_CASE("enumeration covers every arm once") {
        const auto all = enumerate_configs();
        for (int i = 0; i < kArmCount; ++i) CHECK(all[static_cast<std::size_t>(i)].arm() == i);
    }

    TEST_CASE("arms outside the range are rejected") {
        CHECK_THROWS_AS(PlanConfig::from_arm(-1), PreconditionError);
        CHECK_THROWS_AS(PlanConfig::from_arm(64), PreconditionError);
    }
}

TEST_SUITE("teacher") {
    TEST_CASE("arm 0 is the identity") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.y, COUNT(*) FROM a t JOIN b u ON t.id = u.aid WHERE t.x > 3 GROUP BY t.y", s);
        const auto c = apply_plan(ir, PlanConfig::from_arm(0), s);
        CHECK(c.ir == ir);
        CHECK(c.applied.empty());
        CHECK_FALSE(c.approximate);
    }

    TEST_CASE("join reorder does nothing on one table") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.id FROM a t WHERE t.x = 1", s);
        const auto c = apply_plan(ir, PlanConfig{}.with(Strategy::join_reorder, true), s);
        CHECK(c.ir == ir);
        CHECK(c.applied.empty());
    }

    TEST_CASE("join reorder starts from the smallest input") {
        const auto s = skewed_schema();
        const QueryIR ir = parse_sql(
            "SELECT b.v FROM big b JOIN mid m ON b.mid_id = m.id JOIN small x ON m.small_id = x.id", s);
        const QueryIR r = rewrite_join_reorder(ir, s);
        CHECK(aliases_of(r).front() == "x");
        CHECK_NOTHROW(validate(r, s));
        CHECK(prefix_cost(r, s) <= prefix_cost(ir, s));
    }

    TEST_CASE("greedy reorder matches the exhaustive optimum on a chain") {
        const auto s = skewed_schema();
        const QueryIR ir = parse_sql(
            "SELECT b.v FROM big b JOIN mid m ON b.mid_id = m.id JOIN small x ON m.small_id = x.id", s);
        const QueryIR r = rewrite_join_reorder(ir, s);
        // Every connected left-deep order of the chain.
        const std::vector<std::vector<std::string>> orders = {
            {"b", "m", "x"}, {"m", "b", "x"}, {"m", "x", "b"}, {"x", "m", "b"}};
        double best = 1e300;
        for (const auto& o : orders) {
            double total = 0;
            for (std::size_t k = 2; k <= o.size(); ++k) {
                total += estimate_cardinality(std::span(o.data(), k), ir, s);
            }
            best = std::min(best, total);
        }
        CHECK(prefix_cost(r, s) == doctest::Approx(best));
    }

    TEST_CASE("early filter moves predicates into a derived table") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.id, u.z FROM a t JOIN b u ON t.id = u.aid WHERE t.x = 3", s);
        const QueryIR r = rewrite_early_filter(ir, s);
        CHECK(r.predicates.empty());
        const TableRef* t = r.find_alias("t");
        REQUIRE(t != nullptr);
        REQUIRE(t->is_derived());
        CHECK(t->derived->predicates.size() == 1);
        CHECK_FALSE(r.find_alias("u")->is_derived());
        CHECK_NOTHROW(validate(r, s));
    }

    TEST_CASE("projection pushdown keeps exactly the referenced columns") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.y FROM a t JOIN b u ON t.id = u.aid WHERE u.z = 2", s);
        const QueryIR r = rewrite_projection_pushdown(ir, s);
        auto cols_t = exposed_columns(*r.find_alias("t"), s);
        auto cols_u = exposed_columns(*r.find_alias("u"), s);
        std::sort(cols_t.begin(), cols_t.end());
        std::sort(cols_u.begin(), cols_u.end());
        CHECK(cols_t == std::vector<std::string>{"id", "y"});
        CHECK(cols_u == std::vector<std::string>{"aid", "z"});
    }

    TEST_CASE("projection pushdown skips tables that already need every column") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.id, t.x, t.y FROM a t", s);
        CHECK(rewrite_projection_pushdown(ir, s) == ir);
    }

    TEST_CASE("pre-aggregation splits an average into sum and count") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT u.aid, AVG(u.z) FROM a t JOIN b u ON t.id = u.aid GROUP BY u.aid", s);
        const QueryIR r = rewrite_pre_aggregation(ir, s);
        REQUIRE(r != ir);
        CHECK_NOTHROW(validate(r, s));
        const TableRef* t = r.find_alias("u");
        REQUIRE(t->is_derived());
        bool has_sum = false, has_count = false;
        for (const auto& p : t->derived->projections) {
            has_sum = has_sum || p.agg == AggFunc::sum;
            has_count = has_count || p.agg == AggFunc::count;
        }
        CHECK(has_sum);
        CHECK(has_count);
        const auto& top = r.projections[1];
        CHECK(top.agg == AggFunc::sum);
        CHECK(top.divisor.has_value());
        const std::string sql = render_sql(r);
        CHECK(sql.find("/ SUM(") != std::string::npos);
    }

    TEST_CASE("pre-aggregation needs grouping over a join") {
        const auto s = testing::chain_schema();
        const QueryIR single = parse_sql("SELECT t.y, SUM(t.x) FROM a t GROUP BY t.y", s);
        CHECK(rewrite_pre_aggregation(single, s) == single);
        const QueryIR plain = parse_sql("SELECT t.y FROM a t JOIN b u ON t.id = u.aid", s);
        CHECK(rewrite_pre_aggregation(plain, s) == plain);
        // The join column of the grouped table must be a grouping key.
        const QueryIR off_key = parse_sql("SELECT u.z, SUM(u.id) FROM a t JOIN b u ON t.id = u.aid GROUP BY u.z", s);
        CHECK(rewrite_pre_aggregation(off_key, s) == off_key);
        // Aggregates over another table's columns stay put.
        const QueryIR mixed = parse_sql("SELECT u.aid, SUM(t.x) FROM a t JOIN b u ON t.id = u.aid GROUP BY u.aid", s);
        CHECK(rewrite_pre_aggregation(mixed, s) == mixed);
    }

    TEST_CASE("limit pushdown only fires when it cannot change the result") {
        const auto s = testing::chain_schema();
        const QueryIR safe = parse_sql("SELECT t.id, t.x FROM a t LIMIT 5", s);
        const QueryIR r = rewrite_limit_pushdown(safe, s);
        REQUIRE(r != safe);
        REQUIRE(r.base_tables[0].is_derived());
        CHECK(r.base_tables[0].derived->limit == 5);
        CHECK(r.limit == 5);

        const QueryIR ordered = parse_sql("SELECT t.id FROM a t ORDER BY t.x LIMIT 5", s);
        CHECK(rewrite_limit_pushdown(ordered, s) == ordered);
        const QueryIR joined = parse_sql("SELECT t.id FROM a t JOIN b u ON t.id = u.aid LIMIT 5", s);
        CHECK(rewrite_limit_pushdown(joined, s) == joined);
        const QueryIR grouped = parse_sql("SELECT t.y, COUNT(*) FROM a t GROUP BY t.y LIMIT 5", s);
        CHECK(rewrite_limit_pushdown(grouped, s) == grouped);
        const QueryIR unlimited = parse_sql("SELECT t.id FROM a t", s);
        CHECK(rewrite_limit_pushdown(unlimited, s) == unlimited);
    }

    TEST_CASE("sampling marks the plan approximate and checks the rate") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.id FROM a t", s);
        const auto c = apply_plan(ir, PlanConfig{}.with(Strategy::sampling, true), s);
        CHECK(c.approximate);
        REQUIRE(c.ir.base_tables[0].is_derived());
        CHECK(c.ir.base_tables[0].derived->sample_rate == doctest::Approx(0.1));
        CHECK(c.applied == std::vector<Strategy>{Strategy::sampling});
        CHECK_THROWS_AS(rewrite_sampling(ir, s, 0.0), PreconditionError);
        CHECK_THROWS_AS(rewrite_sampling(ir, s, 1.5), PreconditionError);
        CHECK_NOTHROW(rewrite_sampling(ir, s, 1.0));
    }

    TEST_CASE("applied strategies follow the fixed order") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql(
            "SELECT u.z, SUM(t.x) FROM a t JOIN b u ON t.id = u.aid JOIN c v ON u.id = v.bid WHERE t.x > 3 GROUP BY u.z",
            s);
        const auto c = apply_plan(ir, PlanConfig::from_arm(63), s);
        const std::vector<Strategy> order = {Strategy::early_filter, Strategy::projection_pushdown,
                                             Strategy::pre_aggregation, Strategy::join_reorder,
                                             Strategy::limit_pushdown, Strategy::sampling};
        std::size_t pos = 0;
        for (const auto st : c.applied) {
            while (pos < order.size() && order[pos] != st) ++pos;
            CHECK(pos < order.size());
        }
        CHECK(c.applied.back() == Strategy::sampling);
    }

    TEST_CASE("rewrites are deterministic and valid for every arm") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql(
            "SELECT u.z, AVG(t.x), COUNT(*) FROM a t JOIN b u ON t.id = u.aid JOIN c v ON u.id = v.bid "
            "WHERE t.x > 3 AND v.w = 1 GROUP BY u.z ORDER BY u.z LIMIT 3",
            s);
        for (const auto cfg : enumerate_configs()) {
            CAPTURE(cfg.arm());
            const auto first = apply_plan(ir, cfg, s);
            CHECK(first == apply_plan(ir, cfg, s));
            CHECK_NOTHROW(validate(first.ir, s));
            CHECK(first.config == cfg);
        }
    }

    TEST_CASE("sampling targets the largest table") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT u.z FROM c v JOIN b u ON v.bid = u.id JOIN a t ON u.aid = t.id", s);
        const QueryIR r = rewrite_sampling(ir, s, 0.1);
        CHECK(r.find_alias("t")->is_derived());
        CHECK_FALSE(r.find_alias("u")->is_derived());
        CHECK_FALSE(r.find_alias("v")->is_derived());
    }

    TEST_CASE("a rewrite that changes nothing is not recorded") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.id FROM a t", s);
        const auto c = apply_plan(ir, PlanConfig{}.with(Strategy::early_filter, true).with(Strategy::join_reorder, true), s);
        CHECK(c.applied.empty());
        CHECK(c.ir == ir);
    }
}

TEST_SUITE("cardinality") {
    TEST_CASE("equality selectivity uses the distinct count") {
        const auto s = summarize_schema({{"t", 1000, {{"k", 100}, {"r", 1000}}}});
        const QueryIR ir = parse_sql("SELECT x.k FROM t x WHERE x.k = 7", s);
        const std::vector<std::string> one{"x"};
        CHECK(estimate_cardinality(one, ir, s) == doctest::Approx(10.0));
        CHECK(predicate_selectivity(ir.predicates[0], s.at("t")) == doctest::Approx(0.01));
    }

    TEST_CASE("range and not-equal selectivities") {
        const auto s = summarize_schema({{"t", 900, {{"k", 100}}}});
        const QueryIR ir = parse_sql("SELECT x.k FROM t x WHERE x.k > 7 AND x.k <> 3", s);
        CHECK(predicate_selectivity(ir.predicates[0], s.at("t")) == doctest::Approx(1.0 / 3.0));
        CHECK(predicate_selectivity(ir.predicates[1], s.at("t")) == doctest::Approx(0.99));
        const std::vector<std::string> one{"x"};
        CHECK(estimate_cardinality(one, ir, s) == doctest::Approx(900.0 / 3.0 * 0.99));
    }

    TEST_CASE("key join keeps the fact table size") {
        const auto s = summarize_schema({
            {"f", 10000, {{"id", 10000}, {"d_id", 100}}},
            {"d", 100, {{"id", 100}}},
        });
        const QueryIR ir = parse_sql("SELECT x.id FROM f x JOIN d y ON x.d_id = y.id", s);
        const std::vector<std::string> both{"x", "y"};
        CHECK(estimate_cardinality(both, ir, s) == doctest::Approx(10000.0));
    }

    TEST_CASE("pushed-only scope ignores top-level predicates") {
        const auto s = summarize_schema({{"t", 1000, {{"k", 100}}}});
        const QueryIR ir = parse_sql("SELECT x.k FROM t x WHERE x.k = 7", s);
        const std::vector<std::string> one{"x"};
        CHECK(estimate_cardinality(one, ir, s, PredicateScope::pushed_only) == doctest::Approx(1000.0));
        const QueryIR pushed = rewrite_early_filter(ir, s);
        CHECK(estimate_cardinality(one, pushed, s, PredicateScope::pushed_only) == doctest::Approx(10.0));
    }

    TEST_CASE("entry estimates reflect derived tables") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.y FROM a t JOIN b u ON t.id = u.aid WHERE t.x = 3", s);
        const auto plain = estimate_entry(ir.base_tables[0], s);
        CHECK(plain.scan_rows == doctest::Approx(1000.0));
        CHECK(plain.output_rows == doctest::Approx(1000.0));
        CHECK(plain.width == 3);
        const QueryIR r = rewrite_projection_pushdown(rewrite_early_filter(ir, s), s);
        const auto e = estimate_entry(*r.find_alias("t"), s);
        CHECK(e.scan_rows == doctest::Approx(1000.0));
        CHECK(e.output_rows == doctest::Approx(10.0));
        CHECK(e.width == 2);
    }
}
