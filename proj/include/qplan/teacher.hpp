#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qplan/query_ir.hpp"
#include "qplan/schema.hpp"

namespace qplan {

enum class Strategy : std::uint8_t {
    early_filter = 0,
    projection_pushdown = 1,
    pre_aggregation = 2,
    join_reorder = 3,
    sampling = 4,
    limit_pushdown = 5,
};

inline constexpr std::size_t kStrategyCount = 6;
inline constexpr int kArmCount = 64;

std::string_view to_string(Strategy s);

// One of the 64 strategy combinations. Bit i of the arm index is the flag of
// Strategy(i), so arm 0 is the untouched query and arm 63 enables everything.
class PlanConfig {
public:
    constexpr PlanConfig() = default;

    // Throws PreconditionError outside [0, 63].
    static PlanConfig from_arm(int arm);

    constexpr int arm() const noexcept { return bits_; }
    constexpr bool enabled(Strategy s) const noexcept { return (bits_ >> static_cast<int>(s)) & 1; }
    PlanConfig with(Strategy s, bool on) const;

    // Six characters, most significant flag (limit_pushdown) first: arm 5 is "000101".
    std::string bitstring() const;

    constexpr bool operator==(const PlanConfig&) const = default;

private:
    explicit constexpr PlanConfig(std::uint8_t bits) : bits_(bits) {}
    std::uint8_t bits_ = 0;
};

std::array<PlanConfig, kArmCount> enumerate_configs();

struct TeacherOptions {
    double sampling_rate = 0.1;
};

struct PlanCandidate {
    PlanConfig config;
    QueryIR ir;
    std::vector<Strategy> applied;  // in application order
    bool approximate = false;       // sampling changed the plan

    bool operator==(const PlanCandidate&) const = default;
};

// Applies every enabled strategy in the fixed order filter, projection,
// pre-aggregation, join reorder, limit pushdown, sampling. A strategy whose
// rewrite leaves the IR unchanged is not recorded in `applied`.
PlanCandidate apply_plan(const QueryIR& ir, PlanConfig config, const SchemaModel& schema,
                         const TeacherOptions& options = {});

// Individual rewrites. Each returns its input unchanged when inapplicable.
QueryIR rewrite_early_filter(const QueryIR& ir, const SchemaModel& schema);
QueryIR rewrite_projection_pushdown(const QueryIR& ir, const SchemaModel& schema);
QueryIR rewrite_pre_aggregation(const QueryIR& ir, const SchemaModel& schema);
QueryIR rewrite_join_reorder(const QueryIR& ir, const SchemaModel& schema);
QueryIR rewrite_limit_pushdown(const QueryIR& ir, const SchemaModel& schema);
// Throws PreconditionError unless 0 < rate <= 1.
QueryIR rewrite_sampling(const QueryIR& ir, const SchemaModel& schema, double rate);

// --- cardinality estimation -------------------------------------------------

enum class PredicateScope {
    all,          // logical cardinality: every predicate on the aliases counts
    pushed_only,  // only predicates evaluated inside derived tables count
};

// Predicate selectivity: equality 1/d, range 1/3, not-equal 1 - 1/d, where d is
// the distinct count of the underlying base column.
double predicate_selectivity(const Predicate& p, const TableStat& table);

// Estimated rows of joining `aliases` (which must form a connected subgraph):
// the product of filtered entry sizes times 1/max(d_left, d_right) for every
// join condition inside the set.
double estimate_cardinality(std::span<const std::string> aliases, const QueryIR& ir, const SchemaModel& schema,
                            PredicateScope scope = PredicateScope::all);

// Scan behaviour of one FROM entry as the engine sees it.
struct EntryEstimate {
    double scan_rows = 0;    // rows read from the base table
    double output_rows = 0;  // rows produced, before top-level predicates
    std::size_t width = 0;   // columns produced
};

EntryEstimate estimate_entry(const TableRef& ref, const SchemaModel& schema);

}  // namespace qplan
