#include "qplan/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "qplan/bandit.hpp"
#include "qplan/error.hpp"
#include "qplan/harness.hpp"
#include "qplan/rng.hpp"
#include "qplan/student.hpp"
#include "qplan/teacher.hpp"

#include <unistd.h>

namespace qplan {

namespace fs = std::filesystem;

FixtureSchema load_fixture(const fs::path& dir) {
    FixtureSchema f;
    f.name = dir.filename().string();
    std::vector<fs::path> csvs;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
    }
    std::sort(csvs.begin(), csvs.end());
    for (const auto& p : csvs) {
        std::ifstream in(p);
        f.data.emplace(p.stem().string(), read_csv_relation(in));
    }
    f.schema = schema_from_database(f.data);
    std::ifstream q(dir / "queries.sql");
    if (!q) throw FormatError("missing " + (dir / "queries.sql").string());
    std::string line;
    while (std::getline(q, line)) {
        const auto start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line.compare(start, 2, "--") == 0) continue;
        f.queries.push_back(line.substr(start));
    }
    return f;
}

std::vector<FixtureSchema> load_fixtures(const fs::path& root) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / "queries.sql")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<FixtureSchema> out;
    for (const auto& d : dirs) out.push_back(load_fixture(d));
    return out;
}

std::string format_result(const CriterionResult& r) {
    char secs[32];
    std::snprintf(secs, sizeof(secs), "%.2f", r.seconds);
    return std::string(r.passed ? "PASS" : "FAIL") + " [" + std::to_string(r.id) + "] " + r.name + ": " + r.detail +
           " (" + secs + " s)";
}

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* pattern, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
    return buf;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n == 0 ? 0.0 : (n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// --- criterion 1 -----------------------------------------------------------------

CriterionResult semantic_preservation(const AcceptanceOptions& opt) {
    CriterionResult r{1, "semantic preservation", false, "", 0};
    const auto fixtures = load_fixtures(opt.fixture_dir);
    std::size_t queries = 0;
    std::size_t checks = 0;
    std::size_t failures = 0;
    std::string first;
    std::size_t thin = 0;
    for (const auto& f : fixtures) {
        if (f.queries.size() < 20) ++thin;
        for (const auto& sql : f.queries) {
            ++queries;
            try {
                const QueryIR ir = parse_sql(sql, f.schema);
                const Relation expected = evaluate_reference(ir, f.data);
                for (const PlanConfig config : enumerate_configs()) {
                    if (config.enabled(Strategy::sampling)) continue;
                    ++checks;
                    const PlanCandidate plan = apply_plan(ir, config, f.schema);
                    if (!multiset_equal(expected, evaluate_reference(plan.ir, f.data))) {
                        ++failures;
                        if (first.empty()) first = f.name + " arm " + std::to_string(config.arm()) + ": " + sql;
                    }
                }
            } catch (const std::exception& e) {
                ++failures;
                if (first.empty()) first = f.name + ": " + e.what();
            }
        }
    }
    r.detail = std::to_string(checks - std::min(checks, failures)) + "/" + std::to_string(checks) +
               " rewritten results equal over " + std::to_string(queries) + " queries in " +
               std::to_string(fixtures.size()) + " schemas";
    if (!first.empty()) r.detail += "; first mismatch " + first;
    r.passed = fixtures.size() >= 3 && thin == 0 && failures == 0 && checks > 0;
    if (fixtures.size() < 3 || thin > 0) r.detail += "; corpus below 20 queries x 3 schemas";
    return r;
}

// --- criterion 2 -----------------------------------------------------------------

CriterionResult bandit_oracle(const AcceptanceOptions& opt) {
    CriterionResult r{2, "bandit oracle equivalence", false, "", 0};
    WorkloadProfile profile;
    profile.n_queries = opt.oracle_queries;
    const Workload w = generate_workload(profile, rng::mix(opt.seed, 2));
    SimulatorConfig quiet;
    quiet.noise = 0.0;
    SimulatorAdapter sim(w.schema, quiet);

    std::vector<QueryIR> irs;
    std::vector<std::vector<Measurement>> all(w.queries.size());
    std::vector<double> base_lat;
    std::vector<double> base_mem;
    const Constraints open{1e300, 1e300};
    for (std::size_t i = 0; i < w.queries.size(); ++i) {
        const auto& q = w.queries[i];
        irs.push_back(parse_sql(q.sql, w.schema));
        for (const PlanConfig config : enumerate_configs()) {
            const PlanCandidate plan = apply_plan(irs[i], config, w.schema);
            all[i].push_back(sim.execute({q.query_id, plan, irs[i], render_sql(plan.ir), open, q.resources,
                                          query_seed(opt.seed, q.query_id)}));
        }
        base_lat.push_back(all[i][0].latency_ms);
        base_mem.push_back(all[i][0].memory_bytes);
    }
    const Constraints c{2.0 * median_of(base_mem), 2.0 * median_of(base_lat)};

    std::size_t agree = 0;
    std::size_t all_infeasible = 0;
    for (std::size_t i = 0; i < w.queries.size(); ++i) {
        const auto& q = w.queries[i];
        const double baseline = std::max(base_lat[i], 1e-9);
        std::optional<int> best_feasible;
        int best_any = 0;
        std::vector<double> rew(kArmCount);
        for (int a = 0; a < kArmCount; ++a) {
            const bool feasible = check_feasible(all[i][a].latency_ms, all[i][a].memory_bytes, c);
            rew[a] = reward(all[i][a].latency_ms, baseline, feasible);
            if (feasible && (!best_feasible || rew[a] > rew[*best_feasible])) best_feasible = a;
            if (rew[a] > rew[best_any]) best_any = a;
        }
        if (!best_feasible) ++all_infeasible;
        const int oracle = best_feasible.value_or(best_any);
        SearchConfig cfg;
        cfg.seed = query_seed(opt.seed, q.query_id);
        const SearchResult res = search({q.query_id, irs[i], w.schema, c, q.resources, baseline}, sim, cfg);
        agree += res.chosen_arm == oracle;
    }
    const double rate = static_cast<double>(agree) / static_cast<double>(w.queries.size());
    r.passed = w.queries.size() >= 100 && rate >= 0.95;
    r.detail = std::to_string(agree) + "/" + std::to_string(w.queries.size()) +
               " searches chose the exhaustive argmax arm (" + fmt("%.1f%%", 100 * rate) + ", " +
               std::to_string(all_infeasible) + " queries with no feasible arm)";
    return r;
}

// --- criteria 3-7, 9: full runs ------------------------------------------------------

struct PipelineRun {
    fs::path dir;
    MetricsReport report;
    RunArtifacts artifacts;
    double seconds = 0;
};

PipelineRun run_pipeline(const AcceptanceOptions& opt, const fs::path& dir, bool cross_validate = false) {
    PipelineRun p;
    p.dir = dir;
    const auto start = Clock::now();
    WorkloadProfile profile;
    profile.n_queries = opt.n_queries;
    const Workload w = generate_workload(profile, opt.seed);
    SimulatorAdapter sim(w.schema);
    RunOptions ro;
    ro.seed = opt.seed;
    ro.cross_validate = cross_validate;
    fs::remove_all(dir);
    p.report = run_all(w, sim, ro, dir, &p.artifacts);
    p.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return p;
}

CriterionResult method_ladder(const PipelineRun& p) {
    CriterionResult r{3, "method ladder", false, "", p.seconds};
    const auto* base = p.report.find(Method::baseline);
    const auto* teacher = p.report.find(Method::teacher);
    const auto* bandit = p.report.find(Method::bandit);
    const auto* cost = p.report.find(Method::bandit_cost);
    std::set<std::string> domains;
    for (const auto& q : p.artifacts.workload.queries) domains.insert(domain_of(q.template_tag));
    const double total = 100.0 * (base->median_latency_ms - bandit->median_latency_ms) / base->median_latency_ms;
    r.passed = p.report.n_queries >= 60 && domains.size() >= 2 && base->median_latency_ms > teacher->median_latency_ms &&
               teacher->median_latency_ms > bandit->median_latency_ms && total >= 15.0;
    r.detail = fmt("median latency baseline %.2f > teacher %.2f > bandit %.2f ms, total improvement %.1f%%",
                   base->median_latency_ms, teacher->median_latency_ms, bandit->median_latency_ms, total);
    r.detail += fmt("; bandit+cost %.2f ms with %.0f executed pulls vs %.0f", cost->median_latency_ms,
                    static_cast<double>(cost->executed_pulls), static_cast<double>(bandit->executed_pulls));
    return r;
}

CriterionResult csr_ladder(const PipelineRun& p) {
    CriterionResult r{4, "constraint satisfaction ladder", false, "", 0};
    const auto* base = p.report.find(Method::baseline);
    const auto* cost = p.report.find(Method::bandit_cost);
    r.passed = cost->csr_overall - base->csr_overall >= 10.0;
    r.detail = fmt("CSR baseline %.1f%%, bandit+cost %.1f%% (+%.1f pp)", base->csr_overall, cost->csr_overall,
                   cost->csr_overall - base->csr_overall);
    r.detail += fmt("; teacher %.1f%%, bandit %.1f%%", p.report.find(Method::teacher)->csr_overall,
                    p.report.find(Method::bandit)->csr_overall);
    return r;
}

CriterionResult cost_model_quality(const PipelineRun& p, const PipelineRun& cv) {
    CriterionResult r{5, "cost model accuracy", false, "", 0};
    const auto& e = *p.report.cost_model;
    const std::size_t traces = p.report.cost_train_traces + p.report.cost_test_traces;
    const double ratio = e.mae / p.report.median_trace_latency;
    const double r2 = e.r_squared.value_or(-1.0);
    r.passed = traces >= 2000 && r2 >= 0.80 && ratio <= 0.10;
    r.detail = fmt("R2 %.4f, MAE %.3f ms = %.1f%% of median %.2f ms", r2, e.mae, 100 * ratio, p.report.median_trace_latency);
    r.detail += " on " + std::to_string(p.report.cost_test_traces) + " held-out of " + std::to_string(traces) + " traces";
    r.detail += fmt(", depth %.0f", static_cast<double>(p.artifacts.p3->model.params.max_depth));
    if (cv.report.cv && cv.report.cost_model) {
        const auto& c = *cv.report.cost_model;
        r.detail += fmt("; 5-fold CV picks depth %.0f: R2 %.4f, MAE %.1f%%", static_cast<double>(cv.report.cv->chosen_depth),
                        c.r_squared.value_or(-1.0), 100 * c.mae / cv.report.median_trace_latency);
    }
    return r;
}

CriterionResult distillation(const PipelineRun& p) {
    CriterionResult r{6, "distillation agreement", false, "", 0};
    const double lin = *p.report.linear_accuracy;
    const double gb = *p.report.boosted_accuracy;
    r.passed = gb >= 0.80 && lin >= 0.70;
    r.detail = fmt("held-out agreement boosted %.3f, linear %.3f", gb, lin) + " on " +
               std::to_string(p.artifacts.p4->test.examples.size()) + " queries, " +
               std::to_string(p.report.distinct_labels) + " distinct labels";
    return r;
}

CriterionResult speedup(const PipelineRun& p) {
    CriterionResult r{7, "student speedup", false, "", 0};
    const auto& plan = p.report.planning;
    const double full = plan.at("bandit+cost").median;
    const double lr = plan.at("student-lr").median;
    const double gb = plan.at("student-gb").median;
    r.passed = lr * 10.0 <= full && gb * 10.0 <= full;
    r.detail = fmt("median planning: full search %.4f ms, linear %.4f ms (%.0fx), boosted %.4f ms", full, lr,
                   full / lr, gb) +
               fmt(" (%.0fx)", full / gb);
    return r;
}

CriterionResult determinism(const PipelineRun& a, const PipelineRun& b) {
    CriterionResult r{9, "determinism", false, "", 0};
    std::size_t files = 0;
    std::vector<std::string> differing;
    for (const auto& e : fs::recursive_directory_iterator(a.dir)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a.dir);
        if (rel == "timing.json") continue;
        ++files;
        const fs::path other = b.dir / rel;
        if (!fs::exists(other) || read_bytes(e.path()) != read_bytes(other)) differing.push_back(rel.string());
    }
    const bool has_models = fs::exists(a.dir / "phase3" / "forest.json") &&
                            fs::exists(a.dir / "phase4" / "linear_student.json") &&
                            fs::exists(a.dir / "phase4" / "boosted_student.json") &&
                            fs::exists(a.dir / "report" / "report.json");
    r.passed = has_models && differing.empty();
    r.detail = std::to_string(files - differing.size()) + "/" + std::to_string(files) +
               " artifacts byte-identical across two seed-" + std::to_string(a.report.seed) + " runs";
    if (!differing.empty()) r.detail += "; first difference " + differing.front();
    return r;
}

// --- criterion 8 -----------------------------------------------------------------

CriterionResult numerical_checks(const AcceptanceOptions& opt) {
    CriterionResult r{8, "numerical checks", false, "", 0};
    rng::Stream s(rng::mix(opt.seed, 8));

    // finite-difference gradient on a 3-class, 4-feature instance
    DistillationSet toy;
    toy.dim = 4;
    toy.classes = 3;
    for (int i = 0; i < 12; ++i) {
        toy.examples.push_back({"t" + std::to_string(i), {s.uniform(-2, 2), s.uniform(-2, 2), s.uniform(-2, 2), s.uniform(-2, 2)}, i % 3});
    }
    LinearStudent m;
    m.dim = 4;
    m.classes = 3;
    m.mean.assign(4, 0.0);
    m.scale.assign(4, 1.0);
    for (int i = 0; i < 12; ++i) m.weights.push_back(s.uniform(-1, 1));
    for (int i = 0; i < 3; ++i) m.bias.push_back(s.uniform(-1, 1));
    const double l2 = 1e-4;
    const LinearGradient g = linear_loss_gradient(m, toy, l2);
    double worst = 0;
    const double h = 1e-5;
    const auto probe = [&](std::vector<double>& params, const std::vector<double>& grad) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            const double up = linear_loss_gradient(m, toy, l2).loss;
            params[i] = keep - h;
            const double down = linear_loss_gradient(m, toy, l2).loss;
            params[i] = keep;
            const double fd = (up - down) / (2 * h);
            worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-4}));
        }
    };
    probe(m.weights, g.weights);
    probe(m.bias, g.bias);

    // softmax normalisation for random and trained students
    DistillationSet wide;
    for (int i = 0; i < 200; ++i) {
        std::vector<double> x(kStudentDim);
        for (auto& v : x) v = s.uniform(-3, 3);
        wide.examples.push_back({"w" + std::to_string(i), x, static_cast<int>((x[0] > 0) * 7 + (x[1] > 0) * 21 + (i % 5))});
    }
    const LinearStudent lin = train_linear(wide, {0.1, 100, 1e-4});
    const BoostedStudent gb = train_boosted(wide, {20, 0.1, 3, 2});
    LinearStudent random_lin = lin;
    for (auto& w : random_lin.weights) w = s.uniform(-5, 5);
    double norm_err = 0;
    bool negative = false;
    for (const auto& e : wide.examples) {
        for (const auto& p : {student_predict(lin, e.features), student_predict(gb, e.features),
                              student_predict(random_lin, e.features)}) {
            double sum = 0;
            for (double v : p.probabilities) {
                sum += v;
                negative = negative || v < 0;
            }
            norm_err = std::max(norm_err, std::abs(sum - 1.0));
        }
    }

    // boosted loss monotone
    bool monotone = true;
    for (std::size_t i = 1; i < gb.loss_history.size(); ++i) monotone = monotone && gb.loss_history[i] <= gb.loss_history[i - 1] + 1e-12;

    // UCB1 regret doubling on a two-arm Bernoulli instance
    const std::size_t T = 256;
    const double means[2] = {0.9, 0.6};
    const int runs = 200;
    double regret_t = 0;
    double regret_2t = 0;
    for (int run = 0; run < runs; ++run) {
        rng::Stream draws(rng::mix(opt.seed, 1000 + run));
        BanditState st(2);
        std::vector<double> rewards;
        for (std::size_t t = 0; t < 2 * T; ++t) {
            const std::size_t arm = st.select();
            const double x = draws.uniform() < means[arm] ? 1.0 : 0.0;
            st.update(arm, x, true);
            rewards.push_back(x);
        }
        const auto curve = regret_curve(rewards, means[0]);
        regret_t += curve[T - 1] / runs;
        regret_2t += curve[2 * T - 1] / runs;
    }
    const double ratio = regret_2t / regret_t;

    r.passed = worst <= 1e-5 && norm_err <= 1e-9 && !negative && monotone && ratio < 2.0;
    r.detail = fmt("gradient rel err %.2e, softmax sum err %.1e, regret(512)/regret(256) = %.3f", worst, norm_err, ratio);
    r.detail += monotone ? ", boosted loss monotone" : ", boosted loss not monotone";
    return r;
}

}  // namespace

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, const std::vector<int>& only) {
    const auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    fs::path work = options.work_dir;
    if (work.empty()) work = fs::temp_directory_path() / ("qplan-acceptance-" + std::to_string(::getpid()));
    fs::create_directories(work);

    std::vector<CriterionResult> out;
    const auto timed = [&](int id, auto&& fn) {
        const auto start = Clock::now();
        CriterionResult r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            r.id = id;
            r.name = "criterion " + std::to_string(id);
            r.detail = std::string("error: ") + e.what();
        }
        r.seconds += std::chrono::duration<double>(Clock::now() - start).count();
        out.push_back(r);
    };

    if (wanted(1)) {
        timed(1, [&] {
            auto r = semantic_preservation(options);
            return r;
        });
        auto& r = out.back();
        if (r.seconds >= 60.0) {
            r.passed = false;
            r.detail += "; exceeded 60 s";
        }
    }
    if (wanted(2)) {
        timed(2, [&] { return bandit_oracle(options); });
        auto& r = out.back();
        if (r.seconds >= 60.0) {
            r.passed = false;
            r.detail += "; exceeded 60 s";
        }
    }

    std::optional<PipelineRun> first;
    std::string pipeline_error;
    const bool need_run = wanted(3) || wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(9);
    if (need_run) {
        try {
            first = run_pipeline(options, work / "run_a");
        } catch (const std::exception& e) {
            pipeline_error = e.what();
        }
    }
    const auto from_run = [&](int id, auto&& fn) {
        if (!wanted(id)) return;
        if (!first) {
            out.push_back({id, "criterion " + std::to_string(id), false, "pipeline failed: " + pipeline_error, 0});
            return;
        }
        timed(id, [&] { return fn(*first); });
    };
    from_run(3, method_ladder);
    from_run(4, csr_ladder);
    from_run(5, [&](const PipelineRun& a) { return cost_model_quality(a, run_pipeline(options, work / "run_cv", true)); });
    from_run(6, distillation);
    from_run(7, speedup);
    if (wanted(8)) timed(8, [&] { return numerical_checks(options); });
    from_run(9, [&](const PipelineRun& a) { return determinism(a, run_pipeline(options, work / "run_b")); });

    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
    return out;
}

}  // namespace qplan
