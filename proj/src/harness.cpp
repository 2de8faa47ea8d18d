#include "qplan/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "qplan/error.hpp"
#include "qplan/rng.hpp"

namespace qplan {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// small helpers

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Artifacts of one phase are written into a staging directory that replaces
// the phase directory only after the phase succeeded.
class PhaseDir {
public:
    PhaseDir(const fs::path& run_dir, const std::string& name) {
        if (run_dir.empty()) return;
        final_ = run_dir / name;
        staging_ = run_dir / (name + ".partial");
        fs::remove_all(staging_);
        fs::create_directories(staging_);
    }
    PhaseDir(const PhaseDir&) = delete;
    PhaseDir& operator=(const PhaseDir&) = delete;
    ~PhaseDir() {
        if (!staging_.empty() && !committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    fs::path file(const std::string& name) const { return staging_.empty() ? fs::path() : staging_ / name; }

    void commit() {
        if (staging_.empty()) return;
        fs::remove_all(final_);
        fs::rename(staging_, final_);
        committed_ = true;
    }

private:
    fs::path final_;
    fs::path staging_;
    bool committed_ = false;
};

template <class F>
auto run_phase(const char* name, F&& body) {
    try {
        return body();
    } catch (const PhaseError&) {
        throw;
    } catch (const std::exception& e) {
        throw PhaseError(name, e.what());
    }
}

std::string results_jsonl(const std::vector<SearchResult>& results) {
    std::string out;
    for (const auto& r : results) out += search_result_to_json(r) + "\n";
    return out;
}

std::string traces_jsonl(const std::vector<ExecutionTrace>& traces) {
    std::ostringstream s;
    write_trace_jsonl(s, traces);
    return s.str();
}

constexpr Constraints kUnbounded{std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};

Measurement execute_arm(EngineAdapter& executor, const std::string& query_id, const QueryIR& ir,
                        const SchemaModel& schema, int arm, const Constraints& constraints,
                        const ResourceSnapshot& resources, std::uint64_t seed) {
    const PlanCandidate candidate = apply_plan(ir, PlanConfig::from_arm(arm), schema);
    const std::string sql = render_sql(candidate.ir);
    return executor.execute({query_id, candidate, ir, sql, constraints, resources, seed});
}

// ---------------------------------------------------------------------------
// workload templates

struct TemplateDef {
    const char* tag;
    std::string (*make)(rng::Stream&);
};

template <class T, std::size_t N>
const T& pick(rng::Stream& s, const T (&options)[N]) {
    return options[s.index(N)];
}

std::int64_t between(rng::Stream& s, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(s.index(static_cast<std::size_t>(hi - lo + 1)));
}

const char* const kBoroughs[] = {"Manhattan", "Brooklyn", "Queens", "Bronx", "Staten Island", "EWR"};
const char* const kPayments[] = {"card", "cash", "no_charge", "dispute", "unknown", "voided"};
const char* const kKeywords[] = {"sequel", "based-on-novel", "murder", "independent-film", "love",
                                 "friendship", "revenge", "superhero", "time-travel", "heist"};
const char* const kGenders[] = {"f", "m", "u"};
const std::int64_t kLimits[] = {10, 50, 100, 200};

const TemplateDef kTemplates[] = {
    {"taxi_filter_agg",
     [](rng::Stream& s) {
         return "SELECT t.payment_type, COUNT(*), AVG(t.fare_cents) FROM taxi_trips t WHERE t.pickup_hour = " +
                std::to_string(between(s, 0, 23)) + " AND t.fare_cents > " + std::to_string(between(s, 5, 60) * 100) +
                " GROUP BY t.payment_type";
     }},
    {"taxi_zone_join",
     [](rng::Stream& s) {
         return std::string("SELECT z.borough, SUM(t.tip_cents) FROM taxi_trips t JOIN taxi_zones z ON "
                            "t.pickup_zone = z.zone_id WHERE z.borough = '") +
                pick(s, kBoroughs) + "' AND t.passenger_count > " + std::to_string(between(s, 1, 4)) +
                " GROUP BY z.borough";
     }},
    {"taxi_dim_join3",
     [](rng::Stream& s) {
         return "SELECT v.vendor_name, p.payment_name, COUNT(*) FROM taxi_trips t JOIN taxi_vendors v ON "
                "t.vendor_id = v.vendor_id JOIN taxi_payments p ON t.payment_type = p.payment_type WHERE "
                "t.distance_dm < " +
                std::to_string(between(s, 10, 300)) + " AND p.payment_name = '" + pick(s, kPayments) +
                "' GROUP BY v.vendor_name, p.payment_name";
     }},
    {"taxi_limit",
     [](rng::Stream& s) {
         return "SELECT t.trip_id, t.fare_cents FROM taxi_trips t WHERE t.pickup_zone = " +
                std::to_string(between(s, 1, 260)) + " LIMIT " + std::to_string(pick(s, kLimits));
     }},
    {"imdb_keyword_join3",
     [](rng::Stream& s) {
         return std::string("SELECT COUNT(*) FROM imdb_cast_info ci JOIN imdb_movie_keyword mk ON "
                            "ci.movie_id = mk.movie_id JOIN imdb_keyword k ON mk.keyword_id = k.id WHERE "
                            "k.keyword = '") +
                pick(s, kKeywords) + "' AND ci.role_id = " + std::to_string(between(s, 1, 12));
     }},
    {"imdb_cast_groupby",
     [](rng::Stream& s) {
         return "SELECT ci.movie_id, COUNT(*), MAX(ci.nr_order) FROM imdb_cast_info ci JOIN imdb_title t ON "
                "ci.movie_id = t.id WHERE t.production_year > " +
                std::to_string(between(s, 1950, 2015)) + " GROUP BY ci.movie_id";
     }},
    {"imdb_name_join",
     [](rng::Stream& s) {
         return "SELECT n.gender, COUNT(*) FROM imdb_cast_info ci JOIN imdb_name n ON ci.person_id = n.id WHERE "
                "ci.role_id = " +
                std::to_string(between(s, 1, 12)) + " AND n.gender = '" + pick(s, kGenders) + "' GROUP BY n.gender";
     }},
    {"imdb_role_agg",
     [](rng::Stream& s) {
         return "SELECT ci.role_id, COUNT(*), MIN(ci.nr_order) FROM imdb_cast_info ci WHERE ci.nr_order < " +
                std::to_string(between(s, 5, 200)) + " AND ci.credit_year > " + std::to_string(between(s, 1950, 2015)) +
                " GROUP BY ci.role_id";
     }},
};

}  // namespace

// ---------------------------------------------------------------------------
// workload

std::vector<std::string> template_tags() {
    std::vector<std::string> out;
    for (const auto& t : kTemplates) out.emplace_back(t.tag);
    return out;
}

std::string domain_of(std::string_view template_tag) {
    const auto cut = template_tag.find('_');
    return std::string(template_tag.substr(0, cut));
}

SchemaModel default_schema() {
    return summarize_schema({
        {"taxi_trips",
         1'500'000,
         {{"trip_id", 1'500'000},
          {"vendor_id", 4},
          {"pickup_zone", 260},
          {"dropoff_zone", 260},
          {"payment_type", 6},
          {"passenger_count", 7},
          {"fare_cents", 6000},
          {"distance_dm", 900},
          {"pickup_hour", 24},
          {"tip_cents", 2500}}},
        {"taxi_zones", 260, {{"zone_id", 260}, {"borough", 6}, {"zone_name", 260}, {"service_zone", 4}}},
        {"taxi_vendors", 4, {{"vendor_id", 4}, {"vendor_name", 4}}},
        {"taxi_payments", 6, {{"payment_type", 6}, {"payment_name", 6}}},
        {"imdb_title",
         250'000,
         {{"id", 250'000},
          {"title", 240'000},
          {"imdb_index", 20},
          {"kind_id", 7},
          {"production_year", 130},
          {"imdb_id", 250'000},
          {"phonetic_code", 18'000},
          {"episode_of_id", 12'000},
          {"season_nr", 60},
          {"episode_nr", 800},
          {"series_years", 900},
          {"md5sum", 250'000}}},
        {"imdb_cast_info",
         2'000'000,
         {{"id", 2'000'000},
          {"person_id", 400'000},
          {"movie_id", 250'000},
          {"person_role_id", 300'000},
          {"note", 5'000},
          {"nr_order", 500},
          {"role_id", 12},
          {"character_name", 900'000},
          {"credit_year", 130},
          {"billing_group", 9},
          {"uncredited", 2},
          {"source_id", 40}}},
        {"imdb_name", 400'000, {{"id", 400'000}, {"name", 380'000}, {"gender", 3}, {"name_pcode", 20'000}}},
        {"imdb_movie_keyword", 300'000, {{"id", 300'000}, {"movie_id", 150'000}, {"keyword_id", 13'000}}},
        {"imdb_keyword", 13'000, {{"id", 13'000}, {"keyword", 13'000}, {"phonetic_code", 6'000}}},
        {"imdb_kind_type", 7, {{"id", 7}, {"kind", 7}}},
    });
}

Workload generate_workload(const WorkloadProfile& profile, std::uint64_t seed) {
    if (profile.n_queries < 1) throw PreconditionError("workload needs at least one query");
    if (!(profile.max_cpu_load >= 0 && profile.max_cpu_load <= 1)) {
        throw PreconditionError("max_cpu_load must lie in [0, 1]");
    }
    if (!(profile.max_memory_in_use >= 0)) throw PreconditionError("max_memory_in_use must be non-negative");

    std::vector<std::pair<std::size_t, double>> mix;  // (template index, weight)
    if (profile.template_mix.empty()) {
        for (std::size_t t = 0; t < std::size(kTemplates); ++t) mix.emplace_back(t, 1.0);
    } else {
        for (const auto& [tag, w] : profile.template_mix) {
            auto it = std::find_if(std::begin(kTemplates), std::end(kTemplates),
                                   [&](const TemplateDef& d) { return tag == d.tag; });
            if (it == std::end(kTemplates)) throw PreconditionError("unknown template '" + tag + "'");
            if (!(w >= 0) || !std::isfinite(w)) throw PreconditionError("template weights must be non-negative");
            mix.emplace_back(static_cast<std::size_t>(it - std::begin(kTemplates)), w);
        }
    }
    const double total = std::accumulate(mix.begin(), mix.end(), 0.0, [](double a, const auto& p) { return a + p.second; });
    if (!(total > 0)) throw PreconditionError("template weights sum to zero");

    // Largest-remainder apportionment; ties go to the earlier template.
    const auto n = static_cast<double>(profile.n_queries);
    std::vector<std::size_t> counts(mix.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        const double exact = n * mix[i].second / total;
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        assigned += counts[i];
        remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < profile.n_queries; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];

    std::vector<std::size_t> sequence;
    for (std::size_t i = 0; i < mix.size(); ++i) sequence.insert(sequence.end(), counts[i], mix[i].first);
    rng::Stream s(rng::mix(seed, rng::hash_string("workload")));
    s.shuffle(sequence);

    Workload w;
    w.schema = default_schema();
    w.seed = seed;
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        const TemplateDef& def = kTemplates[sequence[i]];
        char id[32];
        std::snprintf(id, sizeof(id), "q%04zu", i + 1);
        WorkloadQuery q{id, def.tag, def.make(s), {}};
        q.resources.cpu_load = s.uniform(0.0, profile.max_cpu_load);
        q.resources.memory_in_use = std::floor(s.uniform(0.0, profile.max_memory_in_use));
        parse_sql(q.sql, w.schema);
        w.queries.push_back(std::move(q));
    }
    return w;
}

void write_workload(const Workload& workload, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "schema.jsonl", std::ios::binary);
        write_schema_jsonl(workload.schema, out);
    }
    std::string lines;
    for (const auto& q : workload.queries) {
        json j;
        j["query_id"] = q.query_id;
        j["template"] = q.template_tag;
        j["sql"] = q.sql;
        j["memory_in_use"] = q.resources.memory_in_use;
        j["cpu_load"] = q.resources.cpu_load;
        lines += j.dump() + "\n";
    }
    write_text(dir / "queries.jsonl", lines);
    json meta;
    meta["format"] = "qplan-workload";
    meta["version"] = 1;
    meta["seed"] = workload.seed;
    meta["n_queries"] = workload.queries.size();
    write_text(dir / "workload.json", meta.dump(1) + "\n");
}

Workload read_workload(const fs::path& dir) {
    Workload w;
    {
        std::ifstream in(dir / "schema.jsonl", std::ios::binary);
        if (!in) throw FormatError("cannot read " + (dir / "schema.jsonl").string());
        w.schema = read_schema_jsonl(in);
    }
    try {
        const json meta = json::parse(read_text(dir / "workload.json"));
        w.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed workload.json: ") + e.what());
    }
    std::istringstream lines(read_text(dir / "queries.jsonl"));
    std::string line;
    std::set<std::string> ids;
    while (std::getline(lines, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        WorkloadQuery q;
        try {
            const json j = json::parse(line);
            q.query_id = j.at("query_id").get<std::string>();
            q.template_tag = j.value("template", std::string());
            q.sql = j.at("sql").get<std::string>();
            q.resources.memory_in_use = j.value("memory_in_use", 0.0);
            q.resources.cpu_load = j.value("cpu_load", 0.0);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("malformed query line: ") + e.what());
        }
        if (!ids.insert(q.query_id).second) throw FormatError("duplicate query id '" + q.query_id + "'");
        q.resources.check();
        parse_sql(q.sql, w.schema);
        w.queries.push_back(std::move(q));
    }
    return w;
}

// ---------------------------------------------------------------------------
// options

std::string_view to_string(Method m) {
    switch (m) {
        case Method::baseline: return "baseline";
        case Method::teacher: return "teacher";
        case Method::bandit: return "bandit";
        case Method::bandit_cost: return "bandit+cost";
        case Method::student_lr: return "student-lr";
        case Method::student_gb: return "student-gb";
    }
    return "?";
}

Method method_from_string(std::string_view name) {
    for (Method m : kAllMethods) {
        if (name == to_string(m)) return m;
    }
    throw PreconditionError("unknown method '" + std::string(name) + "'");
}

std::uint64_t query_seed(std::uint64_t run_seed, std::string_view query_id) {
    return rng::mix(run_seed, rng::hash_string(query_id));
}

bool in_train_split(std::uint64_t run_seed, std::string_view query_id, double train_fraction) {
    return rng::to_unit(rng::mix(run_seed ^ 0x5eed5b117ULL, rng::hash_string(query_id))) < train_fraction;
}

TimingStat summarize_timing(const std::vector<double>& ms) {
    TimingStat t;
    t.samples = ms.size();
    if (ms.empty()) return t;
    t.mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    double var = 0;
    for (double v : ms) var += (v - t.mean) * (v - t.mean);
    t.stddev = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
    t.median = median_of(ms);
    return t;
}

const MethodMetrics* MetricsReport::find(Method m) const {
    for (const auto& mm : methods) {
        if (mm.method == m) return &mm;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// phase 1

Phase1Result run_phase1(const Workload& workload, const fs::path& run_dir) {
    return run_phase("phase1", [&] {
        PhaseDir dir(run_dir, "phase1");
        Phase1Result r;
        r.schema = workload.schema;
        std::string lines;
        for (const auto& q : workload.queries) {
            const auto start = Clock::now();
            QueryIR ir = parse_sql(q.sql, workload.schema);
            const ComplexityMetrics m = complexity(ir);
            r.analysis_ms.push_back(elapsed_ms(start));
            json j;
            j["query_id"] = q.query_id;
            j["template"] = q.template_tag;
            j["table_count"] = m.table_count;
            j["join_count"] = m.join_count;
            j["predicate_count"] = m.predicate_count;
            lines += j.dump() + "\n";
            r.irs.push_back(std::move(ir));
            r.complexity.push_back(m);
        }
        if (!run_dir.empty()) {
            std::ofstream out(dir.file("schema.jsonl"), std::ios::binary);
            write_schema_jsonl(r.schema, out);
        }
        write_text(dir.file("complexity.jsonl"), lines);
        dir.commit();
        return r;
    });
}

// ---------------------------------------------------------------------------
// phase 2

namespace {

struct SearchBatch {
    std::vector<SearchResult> results;
    std::vector<ExecutionTrace> traces;
    std::vector<double> search_ms;
};

SearchBatch search_all(const Workload& workload, const Phase1Result& p1, const Phase2Result& p2,
                       EngineAdapter& executor, const RunOptions& options, const ForestModel* model) {
    SearchBatch b;
    std::uint64_t tick = 0;
    for (std::size_t i = 0; i < workload.queries.size(); ++i) {
        const auto& q = workload.queries[i];
        SearchConfig cfg;
        cfg.max_iterations = options.iterations;
        cfg.seed = query_seed(options.seed, q.query_id);
        const SearchInput input{q.query_id, p1.irs[i], p1.schema, p2.constraints, q.resources,
                                std::max(p2.baseline_latency[i], 1e-9)};
        const auto start = Clock::now();
        SearchResult r = search(input, executor, cfg, model);
        b.search_ms.push_back(elapsed_ms(start));
        if (r.termination == Termination::error) throw ExecutionError(q.query_id, r.error);
        for (const auto& step : r.trace) {
            if (!step.executed) continue;
            b.traces.push_back(make_trace(q.query_id, PlanConfig::from_arm(step.arm), step.latency_ms,
                                          step.memory_bytes, p2.constraints, tick++, cfg.seed));
        }
        b.results.push_back(std::move(r));
    }
    return b;
}

json constraints_json(const Constraints& c, const ConstraintProfile& p) {
    json j;
    j["c_lat_ms"] = c.c_lat;
    j["c_mem_bytes"] = c.c_mem;
    if (p.fixed) {
        j["source"] = "fixed";
    } else {
        j["source"] = "median arm-0 multiple";
        j["latency_factor"] = p.latency_factor;
        j["memory_factor"] = p.memory_factor;
    }
    return j;
}

}  // namespace

Phase2Result run_phase2(const Workload& workload, const Phase1Result& p1, EngineAdapter& executor,
                        const RunOptions& options, const fs::path& run_dir) {
    return run_phase("phase2", [&] {
        if (workload.queries.empty()) throw PhaseError("phase2", "workload has no queries to search");
        if (p1.irs.size() != workload.queries.size()) throw PhaseError("phase2", "phase 1 output does not match the workload");
        PhaseDir dir(run_dir, "phase2");
        Phase2Result r;
        std::string baseline_lines;
        for (std::size_t i = 0; i < workload.queries.size(); ++i) {
            const auto& q = workload.queries[i];
            const Measurement m = execute_arm(executor, q.query_id, p1.irs[i], p1.schema, 0, kUnbounded, q.resources,
                                              query_seed(options.seed, q.query_id));
            r.baseline_latency.push_back(m.latency_ms);
            r.baseline_memory.push_back(m.memory_bytes);
            json j;
            j["query_id"] = q.query_id;
            j["latency_ms"] = m.latency_ms;
            j["memory_bytes"] = m.memory_bytes;
            baseline_lines += j.dump() + "\n";
        }
        if (options.constraints.fixed) {
            r.constraints = *options.constraints.fixed;
        } else {
            r.constraints.c_lat = options.constraints.latency_factor * median_of(r.baseline_latency);
            r.constraints.c_mem = options.constraints.memory_factor * median_of(r.baseline_memory);
        }
        r.constraints.check();

        SearchBatch b = search_all(workload, p1, r, executor, options, nullptr);
        r.results = std::move(b.results);
        r.traces = std::move(b.traces);
        r.search_ms = std::move(b.search_ms);

        write_text(dir.file("constraints.json"), constraints_json(r.constraints, options.constraints).dump(1) + "\n");
        write_text(dir.file("baseline.jsonl"), baseline_lines);
        write_text(dir.file("search_results.jsonl"), results_jsonl(r.results));
        write_text(dir.file("traces.jsonl"), traces_jsonl(r.traces));
        dir.commit();
        return r;
    });
}

// ---------------------------------------------------------------------------
// phase 3

Phase3Result run_phase3(const Workload& workload, const Phase1Result& p1, const Phase2Result& p2,
                        EngineAdapter& executor, const RunOptions& options, const fs::path& run_dir) {
    return run_phase("phase3", [&] {
        if (p2.traces.empty()) throw PhaseError("phase3", "no execution traces to train on");
        PhaseDir dir(run_dir, "phase3");
        Phase3Result r;
        std::map<std::string, std::size_t, std::less<>> index;
        for (std::size_t i = 0; i < workload.queries.size(); ++i) index.emplace(workload.queries[i].query_id, i);

        Matrix xtrain{kFeatureDim, {}};
        Matrix xtest{kFeatureDim, {}};
        std::vector<double> ytrain;
        std::vector<double> ytest;
        std::vector<const ExecutionTrace*> test_traces;
        for (const auto& t : p2.traces) {
            const auto it = index.find(t.query_id);
            if (it == index.end()) throw PhaseError("phase3", "trace for unknown query '" + t.query_id + "'");
            const std::size_t i = it->second;
            const FeatureVector fv =
                featurize(p1.irs[i], t.config, p1.schema, workload.queries[i].resources, p2.constraints);
            if (in_train_split(options.seed, t.query_id, options.train_fraction)) {
                xtrain.push_row(fv);
                ytrain.push_back(t.latency_ms);
            } else {
                xtest.push_row(fv);
                ytest.push_back(t.latency_ms);
                test_traces.push_back(&t);
            }
        }
        r.train_traces = ytrain.size();
        r.test_traces = ytest.size();
        if (ytest.empty()) throw PhaseError("phase3", "held-out split is empty");

        ForestParams params = options.forest;
        if (options.cross_validate) {
            r.cv = cross_validate_depth(xtrain, ytrain, params, {4, 8, 16}, 5, rng::mix(options.seed, 0xc5));
            params.max_depth = r.cv->chosen_depth;
        }
        r.model = train_forest(xtrain, ytrain, params, rng::mix(options.seed, rng::hash_string("forest")));
        r.evaluation = evaluate_model(r.model, xtest, ytest);
        r.median_trace_latency = median_of(ytest);
        for (std::size_t i = 0; i < test_traces.size(); ++i) {
            r.calibration.push_back(
                {test_traces[i]->query_id, test_traces[i]->config.arm(), ytest[i], predict(r.model, xtest.row(i))});
        }

        SearchBatch b = search_all(workload, p1, p2, executor, options, &r.model);
        r.results = std::move(b.results);
        r.traces = std::move(b.traces);
        r.search_ms = std::move(b.search_ms);
        for (std::size_t i = 0; i < workload.queries.size(); ++i) {
            const auto start = Clock::now();
            const FeatureVector fv = featurize(p1.irs[i], PlanConfig::from_arm(r.results[i].chosen_arm), p1.schema,
                                               workload.queries[i].resources, p2.constraints);
            volatile double sink = predict(r.model, fv);
            (void)sink;
            r.prediction_ms.push_back(elapsed_ms(start));
        }

        json eval;
        eval["train_traces"] = r.train_traces;
        eval["test_traces"] = r.test_traces;
        eval["mae_ms"] = r.evaluation.mae;
        eval["r_squared"] = r.evaluation.r_squared ? json(*r.evaluation.r_squared) : json("not-applicable");
        eval["median_trace_latency_ms"] = r.median_trace_latency;
        eval["max_depth"] = params.max_depth;
        if (r.cv) {
            for (const auto& [depth, mae] : r.cv->mae_by_depth) eval["cv_mae_by_depth"][std::to_string(depth)] = mae;
        }
        write_text(dir.file("forest.json"), forest_to_json(r.model) + "\n");
        write_text(dir.file("evaluation.json"), eval.dump(1) + "\n");
        write_text(dir.file("cost_search_results.jsonl"), results_jsonl(r.results));
        write_text(dir.file("cost_traces.jsonl"), traces_jsonl(r.traces));
        dir.commit();
        return r;
    });
}

// ---------------------------------------------------------------------------
// phase 4

Phase4Result run_phase4(const Workload& workload, const Phase1Result& p1, const Phase2Result& p2,
                        const std::vector<SearchResult>& teacher_results, const RunOptions& options,
                        const fs::path& run_dir) {
    return run_phase("phase4", [&] {
        if (workload.queries.empty()) throw PhaseError("phase4", "workload has no queries to distill");
        PhaseDir dir(run_dir, "phase4");
        std::map<std::string, SearchResult, std::less<>> by_id;
        for (const auto& res : teacher_results) by_id.emplace(res.query_id, res);

        std::vector<FeaturizedQuery> train;
        std::vector<FeaturizedQuery> test;
        for (std::size_t i = 0; i < workload.queries.size(); ++i) {
            const auto& q = workload.queries[i];
            FeaturizedQuery f{q.query_id, student_features(featurize(p1.irs[i], PlanConfig{}, p1.schema, q.resources,
                                                                     p2.constraints))};
            (in_train_split(options.seed, q.query_id, options.train_fraction) ? train : test).push_back(std::move(f));
        }
        Phase4Result r;
        r.train = build_distillation_set(train, by_id);
        r.test = build_distillation_set(test, by_id);
        r.linear = train_linear(r.train, options.linear, rng::mix(options.seed, rng::hash_string("linear")));
        r.boosted = train_boosted(r.train, options.boosted, rng::mix(options.seed, rng::hash_string("boosted")));
        r.linear_train_accuracy = accuracy(r.linear, r.train);
        r.boosted_train_accuracy = accuracy(r.boosted, r.train);
        r.linear_test_accuracy = accuracy(r.linear, r.test);
        r.boosted_test_accuracy = accuracy(r.boosted, r.test);

        for (std::size_t i = 0; i < workload.queries.size(); ++i) {
            const auto& q = workload.queries[i];
            const auto plan_with = [&](const auto& model, std::vector<int>& arms, std::vector<double>& ms) {
                const auto start = Clock::now();
                const FeatureVector fv = featurize(p1.irs[i], PlanConfig{}, p1.schema, q.resources, p2.constraints);
                const int arm = student_predict(model, student_features(fv)).arm;
                const PlanCandidate plan = apply_plan(p1.irs[i], PlanConfig::from_arm(arm), p1.schema);
                ms.push_back(elapsed_ms(start));
                arms.push_back(plan.config.arm());
            };
            plan_with(r.linear, r.linear_arms, r.linear_ms);
            plan_with(r.boosted, r.boosted_arms, r.boosted_ms);
        }

        std::string lines;
        for (const auto* set : {&r.train, &r.test}) {
            for (const auto& e : set->examples) {
                json j;
                j["query_id"] = e.query_id;
                j["split"] = set == &r.train ? "train" : "test";
                j["features"] = e.features;
                j["label"] = e.label;
                lines += j.dump() + "\n";
            }
        }
        json acc;
        acc["train_examples"] = r.train.examples.size();
        acc["test_examples"] = r.test.examples.size();
        acc["linear"] = {{"train_accuracy", r.linear_train_accuracy}, {"test_accuracy", r.linear_test_accuracy}};
        acc["boosted"] = {{"train_accuracy", r.boosted_train_accuracy}, {"test_accuracy", r.boosted_test_accuracy}};
        write_text(dir.file("distillation.jsonl"), lines);
        write_text(dir.file("linear_student.json"), linear_to_json(r.linear) + "\n");
        write_text(dir.file("boosted_student.json"), boosted_to_json(r.boosted) + "\n");
        write_text(dir.file("accuracy.json"), acc.dump(1) + "\n");
        dir.commit();
        return r;
    });
}

// ---------------------------------------------------------------------------
// metrics

MetricsReport compute_metrics(const RunArtifacts& a, EngineAdapter& executor, const RunOptions& options) {
    MetricsReport rep;
    rep.seed = options.seed;
    rep.backend = std::string(executor.name());
    rep.n_queries = a.workload.queries.size();
    rep.profile = options.constraints;
    for (const auto& q : a.workload.queries) {
        (in_train_split(options.seed, q.query_id, options.train_fraction) ? rep.n_train : rep.n_test) += 1;
    }
    if (!a.p1 || !a.p2) return rep;
    const Phase1Result& p1 = *a.p1;
    const Phase2Result& p2 = *a.p2;
    rep.constraints = p2.constraints;

    const auto arms_for = [&](Method m) -> std::optional<std::vector<int>> {
        std::vector<int> arms;
        switch (m) {
            case Method::baseline: arms.assign(rep.n_queries, 0); break;
            case Method::teacher: arms.assign(rep.n_queries, kTeacherArm); break;
            case Method::bandit:
                for (const auto& r : p2.results) arms.push_back(r.chosen_arm);
                break;
            case Method::bandit_cost:
                if (!a.p3) return std::nullopt;
                for (const auto& r : a.p3->results) arms.push_back(r.chosen_arm);
                break;
            case Method::student_lr:
                if (!a.p4) return std::nullopt;
                arms = a.p4->linear_arms;
                break;
            case Method::student_gb:
                if (!a.p4) return std::nullopt;
                arms = a.p4->boosted_arms;
                break;
        }
        return arms;
    };

    std::map<std::pair<std::size_t, int>, Measurement> cache;
    double baseline_median = 0;
    for (Method m : options.methods) {
        const auto arms = arms_for(m);
        if (!arms) continue;
        MethodMetrics mm;
        mm.method = m;
        std::vector<double> lat;
        std::map<std::string, std::vector<double>> by_domain;
        std::size_t mem_ok = 0;
        std::size_t lat_ok = 0;
        std::size_t both_ok = 0;
        for (std::size_t i = 0; i < rep.n_queries; ++i) {
            const auto& q = a.workload.queries[i];
            const int arm = (*arms)[i];
            auto it = cache.find({i, arm});
            if (it == cache.end()) {
                it = cache.emplace(std::pair{i, arm}, execute_arm(executor, q.query_id, p1.irs[i], p1.schema, arm,
                                                                  p2.constraints, q.resources,
                                                                  query_seed(options.seed, q.query_id)))
                         .first;
            }
            const Measurement& meas = it->second;
            QueryOutcome o{q.query_id, q.template_tag, m, arm, meas.latency_ms, meas.memory_bytes,
                           meas.memory_bytes <= p2.constraints.c_mem, meas.latency_ms <= p2.constraints.c_lat};
            lat.push_back(o.latency_ms);
            by_domain[domain_of(q.template_tag)].push_back(o.latency_ms);
            mem_ok += o.memory_ok;
            lat_ok += o.latency_ok;
            both_ok += o.memory_ok && o.latency_ok;
            rep.outcomes.push_back(std::move(o));
        }
        const double n = static_cast<double>(std::max<std::size_t>(rep.n_queries, 1));
        mm.median_latency_ms = median_of(lat);
        mm.mean_latency_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / n;
        mm.csr_overall = 100.0 * static_cast<double>(both_ok) / n;
        mm.csr_memory = 100.0 * static_cast<double>(mem_ok) / n;
        mm.csr_latency = 100.0 * static_cast<double>(lat_ok) / n;
        mm.memory_violations = rep.n_queries - mem_ok;
        mm.latency_violations = rep.n_queries - lat_ok;
        mm.violations = rep.n_queries - both_ok;
        for (auto& [d, v] : by_domain) mm.median_by_domain[d] = median_of(v);
        const std::vector<SearchResult>* searched =
            m == Method::bandit ? &p2.results : (m == Method::bandit_cost ? &a.p3->results : nullptr);
        if (searched != nullptr) {
            for (const auto& r : *searched) {
                mm.executed_pulls += r.executed_pulls();
                for (const auto& s : r.trace) mm.exploration_ms += s.executed ? s.latency_ms : 0.0;
            }
        }
        if (m == Method::baseline) baseline_median = mm.median_latency_ms;
        rep.methods.push_back(std::move(mm));
    }
    if (rep.find(Method::baseline) == nullptr) {
        baseline_median = median_of(p2.baseline_latency);
    }
    for (auto& mm : rep.methods) {
        mm.latency_reduction_pct =
            baseline_median > 0 ? 100.0 * (baseline_median - mm.median_latency_ms) / baseline_median : 0.0;
    }
    for (const auto& r : p2.results) ++rep.terminations[std::string(to_string(r.termination))];

    // cost model and students
    if (a.p3) {
        rep.cost_model = a.p3->evaluation;
        rep.cost_train_traces = a.p3->train_traces;
        rep.cost_test_traces = a.p3->test_traces;
        rep.median_trace_latency = a.p3->median_trace_latency;
        rep.cv = a.p3->cv;
        rep.calibration = a.p3->calibration;
    }
    if (a.p4) {
        rep.linear_accuracy = a.p4->linear_test_accuracy;
        rep.boosted_accuracy = a.p4->boosted_test_accuracy;
        rep.linear_train_accuracy = a.p4->linear_train_accuracy;
        rep.boosted_train_accuracy = a.p4->boosted_train_accuracy;
        std::set<int> labels;
        for (const auto* set : {&a.p4->train, &a.p4->test}) {
            for (const auto& e : set->examples) labels.insert(e.label);
        }
        rep.distinct_labels = labels.size();
    }

    // wall-clock overhead
    std::vector<double> teacher_ms;
    std::vector<double> teacher_rule_ms;
    for (std::size_t i = 0; i < rep.n_queries; ++i) {
        auto start = Clock::now();
        for (int arm = 0; arm < kArmCount; ++arm) apply_plan(p1.irs[i], PlanConfig::from_arm(arm), p1.schema);
        teacher_ms.push_back(elapsed_ms(start));
        start = Clock::now();
        apply_plan(p1.irs[i], PlanConfig::from_arm(kTeacherArm), p1.schema);
        teacher_rule_ms.push_back(elapsed_ms(start));
    }
    rep.overhead["schema_analysis"] = summarize_timing(p1.analysis_ms);
    rep.overhead["teacher_planning"] = summarize_timing(teacher_ms);
    rep.overhead["bandit_search"] = summarize_timing(p2.search_ms);
    rep.planning["baseline"] = summarize_timing(std::vector<double>(rep.n_queries, 0.0));
    rep.planning["teacher"] = summarize_timing(teacher_rule_ms);
    rep.planning["bandit"] = summarize_timing(p2.search_ms);
    if (a.p3) {
        rep.overhead["cost_prediction"] = summarize_timing(a.p3->prediction_ms);
        rep.planning["bandit+cost"] = summarize_timing(a.p3->search_ms);
    }
    if (a.p4) {
        rep.overhead["student_inference"] = summarize_timing(a.p4->boosted_ms);
        rep.planning["student-lr"] = summarize_timing(a.p4->linear_ms);
        rep.planning["student-gb"] = summarize_timing(a.p4->boosted_ms);
        const std::vector<double>& full = a.p3 ? a.p3->search_ms : p2.search_ms;
        rep.speedup_linear = measure_speedup(full, a.p4->linear_ms);
        rep.speedup_boosted = measure_speedup(full, a.p4->boosted_ms);
    }
    const MethodMetrics* final_method = rep.find(Method::bandit_cost) ? rep.find(Method::bandit_cost) : rep.find(Method::bandit);
    if (final_method != nullptr) rep.total_execution_ms = final_method->mean_latency_ms;
    return rep;
}

// ---------------------------------------------------------------------------
// reporting

std::string report_to_json(const MetricsReport& rep) {
    json j;
    j["schema_version"] = "qplan-report-v1";
    j["seed"] = rep.seed;
    j["backend"] = rep.backend;
    j["n_queries"] = rep.n_queries;
    j["split"] = {{"train", rep.n_train}, {"test", rep.n_test}};
    if (rep.constraints) j["constraints"] = constraints_json(*rep.constraints, rep.profile);
    auto& methods = j["methods"] = json::array();
    for (const auto& m : rep.methods) {
        json row;
        row["method"] = std::string(to_string(m.method));
        row["median_latency_ms"] = m.median_latency_ms;
        row["mean_latency_ms"] = m.mean_latency_ms;
        row["latency_reduction_pct"] = m.latency_reduction_pct;
        row["csr_overall_pct"] = m.csr_overall;
        row["csr_memory_pct"] = m.csr_memory;
        row["csr_latency_pct"] = m.csr_latency;
        row["violations"] = m.violations;
        row["memory_violations"] = m.memory_violations;
        row["latency_violations"] = m.latency_violations;
        row["executed_pulls"] = m.executed_pulls;
        row["simulated_exploration_ms"] = m.exploration_ms;
        row["median_latency_by_domain"] = m.median_by_domain;
        methods.push_back(std::move(row));
    }
    j["search_terminations"] = rep.terminations;
    if (rep.cost_model) {
        json c;
        c["train_traces"] = rep.cost_train_traces;
        c["test_traces"] = rep.cost_test_traces;
        c["mae_ms"] = rep.cost_model->mae;
        c["r_squared"] = rep.cost_model->r_squared ? json(*rep.cost_model->r_squared) : json("not-applicable");
        c["median_trace_latency_ms"] = rep.median_trace_latency;
        c["mae_over_median"] = rep.median_trace_latency > 0 ? rep.cost_model->mae / rep.median_trace_latency : 0.0;
        if (rep.cv) {
            c["cv_chosen_depth"] = rep.cv->chosen_depth;
            for (const auto& [depth, mae] : rep.cv->mae_by_depth) c["cv_mae_by_depth"][std::to_string(depth)] = mae;
        }
        j["cost_model"] = std::move(c);
    }
    if (rep.linear_accuracy) {
        j["students"] = {{"distinct_labels", rep.distinct_labels},
                         {"linear", {{"train_accuracy", *rep.linear_train_accuracy}, {"test_accuracy", *rep.linear_accuracy}}},
                         {"boosted",
                          {{"train_accuracy", *rep.boosted_train_accuracy}, {"test_accuracy", *rep.boosted_accuracy}}}};
    }
    j["notes"] = json::array({"baseline planning time is 0 by convention; its planning is folded into execution",
                              "wall-clock planning times and speedups are in timing.json"});
    return j.dump(1) + "\n";
}

std::string timing_to_json(const MetricsReport& rep) {
    const auto stat = [](const TimingStat& t) {
        return json{{"mean_ms", t.mean}, {"std_ms", t.stddev}, {"median_ms", t.median}, {"samples", t.samples}};
    };
    json j;
    j["schema_version"] = "qplan-timing-v1";
    json overhead;
    for (const auto& [name, t] : rep.overhead) {
        json row = stat(t);
        row["overhead_ratio_pct"] = rep.total_execution_ms > 0 ? 100.0 * t.mean / rep.total_execution_ms : 0.0;
        overhead[name] = std::move(row);
    }
    j["overhead"] = std::move(overhead);
    j["mean_execution_ms"] = rep.total_execution_ms;
    json planning;
    for (const auto& [name, t] : rep.planning) planning[name] = stat(t);
    j["planning"] = std::move(planning);
    if (rep.speedup_linear) {
        j["speedup"] = {{"student-lr", *rep.speedup_linear}, {"student-gb", *rep.speedup_boosted}};
    }
    return j.dump(1) + "\n";
}

void emit_report(const MetricsReport& rep, const fs::path& dir) {
    fs::create_directories(dir);
    write_text(dir / "report.json", report_to_json(rep));

    std::string outcomes = "query_id,template,method,arm,latency_ms,memory_bytes,memory_ok,latency_ok\n";
    for (const auto& o : rep.outcomes) {
        outcomes += o.query_id + "," + o.template_tag + "," + std::string(to_string(o.method)) + "," +
                    std::to_string(o.arm) + "," + num(o.latency_ms) + "," + num(o.memory_bytes) + "," +
                    (o.memory_ok ? "1" : "0") + "," + (o.latency_ok ? "1" : "0") + "\n";
    }
    write_text(dir / "outcomes.csv", outcomes);

    std::string domains = "domain,method,median_latency_ms\n";
    std::string ablation = "method,improvement_over_baseline_pct,csr_overall_pct\n";
    for (const auto& m : rep.methods) {
        for (const auto& [d, v] : m.median_by_domain) {
            domains += d + "," + std::string(to_string(m.method)) + "," + num(v) + "\n";
        }
        ablation += std::string(to_string(m.method)) + "," + num(m.latency_reduction_pct) + "," + num(m.csr_overall) + "\n";
    }
    write_text(dir / "domain_latency.csv", domains);
    write_text(dir / "ablation.csv", ablation);

    std::string calibration = "query_id,arm,actual_ms,predicted_ms\n";
    for (const auto& c : rep.calibration) {
        calibration += c.query_id + "," + std::to_string(c.arm) + "," + num(c.actual_ms) + "," + num(c.predicted_ms) + "\n";
    }
    write_text(dir / "cost_model_calibration.csv", calibration);
}

MetricsReport run_all(const Workload& workload, EngineAdapter& executor, const RunOptions& options,
                      const fs::path& run_dir, RunArtifacts* artifacts) {
    if (!run_dir.empty()) fs::create_directories(run_dir);
    const auto wants = [&](std::initializer_list<Method> ms) {
        return std::any_of(ms.begin(), ms.end(), [&](Method m) {
            return std::find(options.methods.begin(), options.methods.end(), m) != options.methods.end();
        });
    };
    RunArtifacts local;
    RunArtifacts& a = artifacts != nullptr ? *artifacts : local;
    a.workload = workload;
    a.p1 = run_phase1(workload, run_dir);
    a.p2 = run_phase2(workload, *a.p1, executor, options, run_dir);
    if (wants({Method::bandit_cost, Method::student_lr, Method::student_gb})) {
        a.p3 = run_phase3(workload, *a.p1, *a.p2, executor, options, run_dir);
    }
    if (wants({Method::student_lr, Method::student_gb})) {
        a.p4 = run_phase4(workload, *a.p1, *a.p2, a.p3->results, options, run_dir);
    }
    MetricsReport rep = compute_metrics(a, executor, options);
    if (!run_dir.empty()) {
        json run;
        run["format"] = "qplan-run";
        run["version"] = 1;
        run["seed"] = options.seed;
        run["iterations"] = options.iterations;
        run["backend"] = std::string(executor.name());
        run["methods"] = json::array();
        for (Method m : options.methods) run["methods"].push_back(std::string(to_string(m)));
        run["cross_validate"] = options.cross_validate;
        write_text(run_dir / "run.json", run.dump(1) + "\n");
        emit_report(rep, run_dir / "report");
        write_text(run_dir / "timing.json", timing_to_json(rep));
    }
    return rep;
}

}  // namespace qplan
