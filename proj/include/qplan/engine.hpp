#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qplan/query_ir.hpp"
#include "qplan/schema.hpp"
#include "qplan/teacher.hpp"

namespace qplan {

struct Constraints {
    double c_mem = 0;  // bytes
    double c_lat = 0;  // milliseconds

    // Throws PreconditionError unless both caps are positive.
    void check() const;
    bool operator==(const Constraints&) const = default;
};

struct ResourceSnapshot {
    double memory_in_use = 0;  // bytes
    double cpu_load = 0;       // [0, 1]

    void check() const;
    bool operator==(const ResourceSnapshot&) const = default;
};

// Feasible iff memory <= c_mem and latency <= c_lat; the boundary is feasible.
bool check_feasible(double latency_ms, double memory_bytes, const Constraints& constraints);

struct ExecutionTrace {
    std::string query_id;
    PlanConfig config;
    double latency_ms = 0;
    double memory_bytes = 0;
    bool feasible = false;
    std::uint64_t timestamp = 0;  // monotonic tick within a run
    std::uint64_t seed = 0;

    bool operator==(const ExecutionTrace&) const = default;
};

ExecutionTrace make_trace(std::string query_id, PlanConfig config, double latency_ms, double memory_bytes,
                          const Constraints& constraints, std::uint64_t timestamp, std::uint64_t seed);

// JSON-lines with fields query_id, arm, flags, latency_ms, memory_bytes, feasible, seed.
void write_trace_jsonl(std::ostream& out, const std::vector<ExecutionTrace>& traces);
std::vector<ExecutionTrace> read_trace_jsonl(std::istream& in, const Constraints& constraints);

// --- reference evaluator -------------------------------------------------------

// Empty state only arises from MIN/MAX/AVG over no rows.
using Value = std::variant<std::monostate, std::int64_t, double, std::string>;

struct Relation {
    std::vector<std::string> columns;
    std::vector<std::vector<Value>> rows;
};

using Database = std::map<std::string, Relation, std::less<>>;

// Total order used for grouping and canonical comparisons: empty < numbers <
// strings, numbers compared by value.
int compare_values(const Value& a, const Value& b);

// Exact multiset semantics over in-memory relations: nested-loop joins,
// filtering, grouping, aggregation, ordering, limit. Rows without an ORDER BY
// come out in provenance order (base-row positions keyed by alias name), and
// groups in key order, so the result does not depend on join order.
// Throws EvaluationError (missing table, type mismatch) and PreconditionError
// (sampled input).
Relation evaluate_reference(const QueryIR& ir, const Database& data);

// Multiset equality; decimals compare within a relative tolerance.
bool multiset_equal(const Relation& a, const Relation& b, double rel_tol = 1e-9);

// CSV with a header row. Cells parse as integer, then decimal, else string.
Relation read_csv_relation(std::istream& in);

// Table statistics derived from data (exact row and distinct counts).
SchemaModel schema_from_database(const Database& data);

// --- simulator -----------------------------------------------------------------

// Pinned cost law. Any change to the constants or formula bumps `version`.
struct SimulatorConfig {
    std::string version = "sim-v1";
    double alpha_ms_per_row = 2e-4;
    double beta_cpu = 1.0;
    double gamma_mem = 1.0;
    double bytes_per_column = 8.0;
    double noise = 0.05;  // half-width of the multiplicative noise band
};

struct SimulatedCost {
    double latency_ms = 0;
    double memory_bytes = 0;
    double base_work = 0;
    double max_intermediate = 0;
    std::size_t max_width = 0;
};

// Deterministic cost of running `candidate`:
//   work    = sum of scan rows + sum of join intermediate cardinalities
//   latency = alpha * work * (1 + beta * cpu) * (1 + eps)
//   memory  = gamma * max intermediate * bytes_per_column * widest width + memory_in_use
// Top-level WHERE predicates run after the last join, so only predicates
// inside derived tables shrink intermediates. eps ~ U[-noise, noise] is drawn
// from (seed, original query); every plan of one query under one seed shares it.
SimulatedCost simulate_execution(const PlanCandidate& candidate, const QueryIR& original, const SchemaModel& schema,
                                 const ResourceSnapshot& resources, std::uint64_t seed,
                                 const SimulatorConfig& config = {});

// --- adapters --------------------------------------------------------------------

struct ExecutionRequest {
    std::string_view query_id;
    const PlanCandidate& candidate;
    const QueryIR& original;
    std::string_view sql;
    Constraints constraints;
    ResourceSnapshot resources;
    std::uint64_t seed = 0;
};

struct Measurement {
    double latency_ms = 0;
    double memory_bytes = 0;
    bool resource_violation = false;
};

// Backend contract used by the search and the harness. Implementations report
// wall-clock latency and peak memory of running the request; failures raise
// ExecutionError carrying the query id.
class EngineAdapter {
public:
    virtual ~EngineAdapter() = default;
    virtual Measurement execute(const ExecutionRequest& request) = 0;
    virtual std::string_view name() const = 0;
};

class SimulatorAdapter final : public EngineAdapter {
public:
    SimulatorAdapter(const SchemaModel& schema, SimulatorConfig config = {});

    Measurement execute(const ExecutionRequest& request) override;
    std::string_view name() const override { return "sim"; }
    const SimulatorConfig& config() const noexcept { return config_; }

private:
    const SchemaModel& schema_;
    SimulatorConfig config_;
};

// Runs an external command once per request, feeding the SQL on stdin and
// reading "<latency_ms> <memory_bytes>" from stdout. Executions are
// serialized so latency measurements do not overlap.
class CommandAdapter final : public EngineAdapter {
public:
    explicit CommandAdapter(std::string command);

    Measurement execute(const ExecutionRequest& request) override;
    std::string_view name() const override { return "adapter"; }

private:
    std::string command_;
    std::mutex mutex_;
};

}  // namespace qplan
