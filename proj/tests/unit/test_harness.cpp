#include <algorithm>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "qplan/error.hpp"
#include "qplan/harness.hpp"
#include "support.hpp"

using namespace qplan;
namespace fs = std::filesystem;

namespace {

class FailingAdapter final : public EngineAdapter {
public:
    Measurement execute(const ExecutionRequest& request) override {
        throw ExecutionError(std::string(request.query_id), "engine unavailable");
    }
    std::string_view name() const override { return "failing"; }
};

Workload small_workload(std::size_t n, std::uint64_t seed = 3) {
    WorkloadProfile p;
    p.n_queries = n;
    return generate_workload(p, seed);
}

}  // namespace

TEST_SUITE("workload") {
    TEST_CASE("generation is deterministic per seed") {
        const auto a = small_workload(30, 8);
        const auto b = small_workload(30, 8);
        const auto c = small_workload(30, 9);
        REQUIRE(a.queries.size() == 30);
        for (std::size_t i = 0; i < 30; ++i) {
            CHECK(a.queries[i].sql == b.queries[i].sql);
            CHECK(a.queries[i].resources == b.queries[i].resources);
        }
        bool differs = false;
        for (std::size_t i = 0; i < 30; ++i) differs = differs || a.queries[i].sql != c.queries[i].sql;
        CHECK(differs);
        CHECK(a.schema == default_schema());
    }

    TEST_CASE("every template and both domains appear") {
        const auto w = small_workload(80);
        std::set<std::string> tags, domains, ids;
        for (const auto& q : w.queries) {
            tags.insert(q.template_tag);
            domains.insert(domain_of(q.template_tag));
            ids.insert(q.query_id);
            CHECK_NOTHROW(parse_sql(q.sql, w.schema));
            CHECK(q.resources.cpu_load <= 0.2);
            CHECK(q.resources.cpu_load >= 0.0);
        }
        const auto all = template_tags();
        CHECK(tags == std::set<std::string>(all.begin(), all.end()));
        CHECK(domains == std::set<std::string>{"imdb", "taxi"});
        CHECK(ids.size() == 80);
    }

    TEST_CASE("a single query works") {
        const auto w = small_workload(1);
        REQUIRE(w.queries.size() == 1);
        CHECK_NOTHROW(parse_sql(w.queries[0].sql, w.schema));
    }

    TEST_CASE("divisible sizes follow the mix exactly") {
        WorkloadProfile p;
        p.n_queries = 40;
        const auto tags = template_tags();
        p.template_mix = {{tags[0], 3.0}, {tags[1], 1.0}};
        const auto w = generate_workload(p, 4);
        std::map<std::string, int> counts;
        for (const auto& q : w.queries) ++counts[q.template_tag];
        CHECK(counts.size() == 2);
        CHECK(counts[tags[0]] == 30);
        CHECK(counts[tags[1]] == 10);
    }

    TEST_CASE("invalid profiles are rejected") {
        WorkloadProfile p;
        p.n_queries = 0;
        CHECK_THROWS_AS(generate_workload(p, 1), PreconditionError);
        p.n_queries = 5;
        p.template_mix = {{"no_such_template", 1.0}};
        CHECK_THROWS_AS(generate_workload(p, 1), PreconditionError);
        p.template_mix = {{template_tags()[0], -1.0}};
        CHECK_THROWS_AS(generate_workload(p, 1), PreconditionError);
    }

    TEST_CASE("write and read round trip") {
        const auto w = small_workload(12);
        const auto dir = testing::scratch_dir("workload");
        write_workload(w, dir);
        CHECK(fs::exists(dir / "schema.jsonl"));
        CHECK(fs::exists(dir / "queries.jsonl"));
        const auto back = read_workload(dir);
        CHECK(back.schema == w.schema);
        CHECK(back.seed == w.seed);
        REQUIRE(back.queries.size() == w.queries.size());
        for (std::size_t i = 0; i < w.queries.size(); ++i) {
            CHECK(back.queries[i].query_id == w.queries[i].query_id);
            CHECK(back.queries[i].template_tag == w.queries[i].template_tag);
            CHECK(back.queries[i].sql == w.queries[i].sql);
            CHECK(back.queries[i].resources == w.queries[i].resources);
        }
        fs::remove(dir / "queries.jsonl");
        CHECK_THROWS_AS(read_workload(dir), FormatError);
        fs::remove_all(dir);
    }
}

TEST_SUITE("run configuration") {
    TEST_CASE("method names") {
        for (const Method m : kAllMethods) CHECK(method_from_string(to_string(m)) == m);
        CHECK(to_string(Method::bandit_cost) == "bandit+cost");
        CHECK(to_string(Method::student_gb) == "student-gb");
        CHECK_THROWS_AS(method_from_string("oracle"), PreconditionError);
    }

    TEST_CASE("the split holds out about a fifth of the queries") {
        std::size_t train = 0;
        for (int i = 0; i < 2000; ++i) train += in_train_split(42, "q" + std::to_string(i), 0.8);
        CHECK(train / 2000.0 == doctest::Approx(0.8).epsilon(0.04));
        CHECK(in_train_split(42, "q17", 0.8) == in_train_split(42, "q17", 0.8));
    }

    TEST_CASE("query seeds differ by query and by run") {
        CHECK(query_seed(1, "q1") == query_seed(1, "q1"));
        CHECK(query_seed(1, "q1") != query_seed(1, "q2"));
        CHECK(query_seed(1, "q1") != query_seed(2, "q1"));
    }

    TEST_CASE("timing summaries") {
        const auto t = summarize_timing({1.0, 2.0, 3.0, 4.0});
        CHECK(t.mean == doctest::Approx(2.5));
        CHECK(t.median == doctest::Approx(2.5));
        CHECK(t.samples == 4);
        CHECK(t.stddev > 0);
        CHECK(summarize_timing({}).samples == 0);
    }
}

TEST_SUITE("phases") {
    TEST_CASE("an empty workload stops after analysis") {
        Workload w;
        w.schema = default_schema();
        const auto dir = testing::scratch_dir("empty");
        const auto p1 = run_phase1(w, dir);
        CHECK(p1.irs.empty());
        SimulatorAdapter sim(w.schema);
        try {
            run_phase2(w, p1, sim, RunOptions{}, dir);
            FAIL("phase 2 should refuse an empty workload");
        } catch (const PhaseError& e) {
            CHECK(e.phase() == "phase2");
        }
        Phase2Result p2;
        CHECK_THROWS_AS(run_phase3(w, p1, p2, sim, RunOptions{}, dir), PhaseError);
        CHECK_THROWS_AS(run_phase4(w, p1, p2, {}, RunOptions{}, dir), PhaseError);
        fs::remove_all(dir);
    }

    TEST_CASE("a failing engine leaves earlier phases intact") {
        const auto w = small_workload(4);
        const auto dir = testing::scratch_dir("failing");
        const auto p1 = run_phase1(w, dir);
        REQUIRE(fs::exists(dir / "phase1"));
        std::vector<std::string> before;
        for (const auto& e : fs::recursive_directory_iterator(dir / "phase1")) before.push_back(testing::slurp(e.path()));
        FailingAdapter failing;
        try {
            run_phase2(w, p1, failing, RunOptions{}, dir);
            FAIL("phase 2 should fail");
        } catch (const PhaseError& e) {
            CHECK(e.phase() == "phase2");
            CHECK(std::string(e.what()).find("engine unavailable") != std::string::npos);
        }
        CHECK_FALSE(fs::exists(dir / "phase2"));
        std::vector<std::string> after;
        for (const auto& e : fs::recursive_directory_iterator(dir / "phase1")) after.push_back(testing::slurp(e.path()));
        CHECK(before == after);
        fs::remove_all(dir);
    }

    TEST_CASE("an unparseable query fails analysis") {
        auto w = small_workload(3);
        w.queries[1].sql = "SELECT * FROM nowhere";
        const auto dir = testing::scratch_dir("badsql");
        CHECK_THROWS_AS(run_phase1(w, dir), PhaseError);
        fs::remove_all(dir);
    }
}

TEST_SUITE("report") {
    TEST_CASE("a small run satisfies the report invariants") {
        const auto w = small_workload(24, 42);
        const auto dir = testing::scratch_dir("run");
        SimulatorAdapter sim(w.schema);
        RunOptions opts;
        const auto rep = run_all(w, sim, opts, dir);
        CHECK(rep.n_queries == 24);
        CHECK(rep.n_train + rep.n_test == 24);
        REQUIRE(rep.constraints.has_value());
        REQUIRE(rep.methods.size() == 6);
        for (const auto& m : rep.methods) {
            CAPTURE(to_string(m.method));
            CHECK(m.csr_overall >= 0.0);
            CHECK(m.csr_overall <= 100.0);
            CHECK(m.csr_overall <= m.csr_memory + 1e-12);
            CHECK(m.csr_overall <= m.csr_latency + 1e-12);
            CHECK(m.violations >= std::max(m.memory_violations, m.latency_violations));
            CHECK(m.violations <= m.memory_violations + m.latency_violations);
            CHECK(m.median_latency_ms > 0);
        }
        CHECK(rep.find(Method::baseline)->latency_reduction_pct == doctest::Approx(0.0));
        CHECK(rep.find(Method::baseline)->executed_pulls == 0);
        CHECK(rep.find(Method::bandit)->executed_pulls > 0);
        CHECK(rep.outcomes.size() == 24 * 6);
        for (const auto& o : rep.outcomes) {
            if (o.method == Method::baseline) CHECK(o.arm == 0);
            if (o.method == Method::teacher) CHECK(o.arm == kTeacherArm);
        }
        CHECK(rep.cost_model.has_value());
        CHECK(rep.linear_accuracy.has_value());
        CHECK(rep.boosted_accuracy.has_value());

        for (const std::string f : {"report/report.json", "timing.json", "phase2/traces.jsonl", "phase3/forest.json",
                              "phase4/linear_student.json", "phase4/boosted_student.json"}) {
            CAPTURE(f);
            CHECK(fs::exists(dir / f));
        }
        const auto j = nlohmann::json::parse(testing::slurp(dir / "report" / "report.json"));
        CHECK(j.at("methods").size() == 6);
        CHECK(report_to_json(rep) == report_to_json(rep));

        const auto dir2 = testing::scratch_dir("run2");
        const auto rep2 = run_all(w, sim, opts, dir2);
        CHECK(report_to_json(rep2) == report_to_json(rep));
        CHECK(testing::slurp(dir2 / "phase3" / "forest.json") == testing::slurp(dir / "phase3" / "forest.json"));
        fs::remove_all(dir);
        fs::remove_all(dir2);
    }

    TEST_CASE("an ablation only runs what it needs") {
        const auto w = small_workload(10, 5);
        const auto dir = testing::scratch_dir("ablation");
        SimulatorAdapter sim(w.schema);
        RunOptions opts;
        opts.methods = {Method::baseline, Method::teacher};
        const auto rep = run_all(w, sim, opts, dir);
        CHECK(rep.methods.size() == 2);
        CHECK_FALSE(rep.cost_model.has_value());
        CHECK_FALSE(fs::exists(dir / "phase3"));
        CHECK_FALSE(fs::exists(dir / "phase4"));
        fs::remove_all(dir);
    }

    TEST_CASE("fixed caps are used as given") {
        const auto w = small_workload(6, 5);
        const auto dir = testing::scratch_dir("fixed");
        SimulatorAdapter sim(w.schema);
        RunOptions opts;
        opts.methods = {Method::baseline};
        opts.constraints.fixed = Constraints{1e12, 1e9};
        const auto rep = run_all(w, sim, opts, dir);
        REQUIRE(rep.constraints.has_value());
        CHECK(*rep.constraints == Constraints{1e12, 1e9});
        CHECK(rep.methods[0].csr_overall == 100.0);
        fs::remove_all(dir);
    }
}
