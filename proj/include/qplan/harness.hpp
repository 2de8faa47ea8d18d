#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qplan/bandit.hpp"
#include "qplan/cost_model.hpp"
#include "qplan/engine.hpp"
#include "qplan/query_ir.hpp"
#include "qplan/schema.hpp"
#include "qplan/student.hpp"

namespace qplan {

// --- workload -----------------------------------------------------------------------

struct WorkloadQuery {
    std::string query_id;
    std::string template_tag;
    std::string sql;
    ResourceSnapshot resources;
};

struct Workload {
    SchemaModel schema;
    std::vector<WorkloadQuery> queries;
    std::uint64_t seed = 0;
};

struct WorkloadProfile {
    std::size_t n_queries = 120;
    // (template tag, weight); empty means every template equally.
    std::vector<std::pair<std::string, double>> template_mix;
    double max_cpu_load = 0.2;
    double max_memory_in_use = 32.0 * 1024 * 1024;  // bytes
};

// Template tags in generation order. Tags start with their domain ("taxi_", "imdb_").
std::vector<std::string> template_tags();
std::string domain_of(std::string_view template_tag);

// Statistics of the two synthetic domains (taxi-like trips and imdb-like titles).
SchemaModel default_schema();

// Deterministic given the seed. Per-template counts follow the mix by largest
// remainder, so divisible sizes match it exactly. Throws PreconditionError on an
// invalid profile.
Workload generate_workload(const WorkloadProfile& profile, std::uint64_t seed);

// <dir>/schema.jsonl, <dir>/queries.jsonl, <dir>/workload.json
void write_workload(const Workload& workload, const std::filesystem::path& dir);
// Throws FormatError, or the parser's errors for queries that do not parse.
Workload read_workload(const std::filesystem::path& dir);

// --- run configuration ----------------------------------------------------------------

enum class Method { baseline, teacher, bandit, bandit_cost, student_lr, student_gb };

inline constexpr Method kAllMethods[] = {Method::baseline,    Method::teacher,    Method::bandit,
                                         Method::bandit_cost, Method::student_lr, Method::student_gb};

std::string_view to_string(Method m);
// Accepts baseline, teacher, bandit, bandit+cost, student-lr, student-gb.
Method method_from_string(std::string_view name);

// Fixed rule-based plan used for the teacher-only method.
inline constexpr int kTeacherArm = 0b001011;  // early_filter + projection_pushdown + join_reorder

struct ConstraintProfile {
    double latency_factor = 2.0;  // c_lat = factor * median arm-0 latency
    double memory_factor = 2.0;   // c_mem = factor * median arm-0 memory
    std::optional<Constraints> fixed;
};

struct RunOptions {
    std::uint64_t seed = 42;
    std::size_t iterations = 100;
    ConstraintProfile constraints;
    bool cross_validate = false;
    std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
    ForestParams forest;
    LinearHyper linear;
    BoostedHyper boosted;
    double train_fraction = 0.8;
};

// Execution seed of one query within a run.
std::uint64_t query_seed(std::uint64_t run_seed, std::string_view query_id);
// Seeded 80/20-style split by query id.
bool in_train_split(std::uint64_t run_seed, std::string_view query_id, double train_fraction);

// --- phases ---------------------------------------------------------------------------

struct Phase1Result {
    SchemaModel schema;
    std::vector<QueryIR> irs;
    std::vector<ComplexityMetrics> complexity;
    std::vector<double> analysis_ms;  // wall clock per query
};

struct Phase2Result {
    Constraints constraints;
    std::vector<double> baseline_latency;
    std::vector<double> baseline_memory;
    std::vector<SearchResult> results;
    std::vector<ExecutionTrace> traces;
    std::vector<double> search_ms;
};

struct CalibrationPoint {
    std::string query_id;
    int arm = 0;
    double actual_ms = 0;
    double predicted_ms = 0;
};

struct Phase3Result {
    ForestModel model;
    ModelEvaluation evaluation;
    std::size_t train_traces = 0;
    std::size_t test_traces = 0;
    double median_trace_latency = 0;
    std::optional<CrossValidation> cv;
    std::vector<CalibrationPoint> calibration;
    // bandit search guided by the trained model
    std::vector<SearchResult> results;
    std::vector<ExecutionTrace> traces;
    std::vector<double> search_ms;
    std::vector<double> prediction_ms;
};

struct Phase4Result {
    DistillationSet train;
    DistillationSet test;
    LinearStudent linear;
    BoostedStudent boosted;
    double linear_train_accuracy = 0;
    double linear_test_accuracy = 0;
    double boosted_train_accuracy = 0;
    double boosted_test_accuracy = 0;
    std::vector<int> linear_arms;   // prediction per workload query
    std::vector<int> boosted_arms;
    std::vector<double> linear_ms;  // featurize + predict + rewrite, per query
    std::vector<double> boosted_ms;
};

// Each phase writes its artifacts to <run_dir>/phaseN and fails with PhaseError,
// leaving earlier phase directories untouched.
Phase1Result run_phase1(const Workload& workload, const std::filesystem::path& run_dir);
Phase2Result run_phase2(const Workload& workload, const Phase1Result& p1, EngineAdapter& executor,
                        const RunOptions& options, const std::filesystem::path& run_dir);
Phase3Result run_phase3(const Workload& workload, const Phase1Result& p1, const Phase2Result& p2,
                        EngineAdapter& executor, const RunOptions& options, const std::filesystem::path& run_dir);
Phase4Result run_phase4(const Workload& workload, const Phase1Result& p1, const Phase2Result& p2,
                        const std::vector<SearchResult>& teacher_results, const RunOptions& options,
                        const std::filesystem::path& run_dir);

// --- metrics --------------------------------------------------------------------------

struct QueryOutcome {
    std::string query_id;
    std::string template_tag;
    Method method = Method::baseline;
    int arm = 0;
    double latency_ms = 0;
    double memory_bytes = 0;
    bool memory_ok = false;
    bool latency_ok = false;
};

struct MethodMetrics {
    Method method = Method::baseline;
    double median_latency_ms = 0;
    double mean_latency_ms = 0;
    double latency_reduction_pct = 0;  // median, relative to the baseline method
    double csr_overall = 0;
    double csr_memory = 0;
    double csr_latency = 0;
    std::size_t memory_violations = 0;
    std::size_t latency_violations = 0;
    std::size_t violations = 0;  // queries violating at least one cap
    std::size_t executed_pulls = 0;
    double exploration_ms = 0;  // simulated latency spent on executed pulls
    std::map<std::string, double> median_by_domain;
};

struct TimingStat {
    double mean = 0;
    double stddev = 0;
    double median = 0;
    std::size_t samples = 0;
};

TimingStat summarize_timing(const std::vector<double>& ms);

struct MetricsReport {
    std::uint64_t seed = 0;
    std::string backend;
    std::size_t n_queries = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::optional<Constraints> constraints;
    ConstraintProfile profile;
    std::vector<MethodMetrics> methods;
    std::vector<QueryOutcome> outcomes;
    std::map<std::string, std::size_t> terminations;

    std::optional<ModelEvaluation> cost_model;
    std::size_t cost_train_traces = 0;
    std::size_t cost_test_traces = 0;
    double median_trace_latency = 0;
    std::optional<CrossValidation> cv;
    std::vector<CalibrationPoint> calibration;

    std::optional<double> linear_accuracy;
    std::optional<double> boosted_accuracy;
    std::optional<double> linear_train_accuracy;
    std::optional<double> boosted_train_accuracy;
    std::size_t distinct_labels = 0;

    // Wall-clock measurements; excluded from the deterministic report.
    std::map<std::string, TimingStat> overhead;
    std::map<std::string, TimingStat> planning;
    std::optional<double> speedup_linear;
    std::optional<double> speedup_boosted;
    double total_execution_ms = 0;

    const MethodMetrics* find(Method m) const;
};

struct RunArtifacts {
    Workload workload;
    std::optional<Phase1Result> p1;
    std::optional<Phase2Result> p2;
    std::optional<Phase3Result> p3;
    std::optional<Phase4Result> p4;
};

MetricsReport compute_metrics(const RunArtifacts& artifacts, EngineAdapter& executor, const RunOptions& options);

// <dir>/report.json (deterministic) and the CSV series.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir);
std::string report_to_json(const MetricsReport& report);
std::string timing_to_json(const MetricsReport& report);

// Runs the phases the requested methods need, then computes and emits the
// report into <run_dir>/report. Wall-clock timings go to <run_dir>/timing.json.
MetricsReport run_all(const Workload& workload, EngineAdapter& executor, const RunOptions& options,
                      const std::filesystem::path& run_dir, RunArtifacts* artifacts = nullptr);

}  // namespace qplan
