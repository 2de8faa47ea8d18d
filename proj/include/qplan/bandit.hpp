#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qplan/cost_model.hpp"
#include "qplan/engine.hpp"
#include "qplan/teacher.hpp"

namespace qplan {

// Feasible: clamp(1 - latency / baseline, -1, 1). Infeasible: exactly -1.
// Throws PreconditionError unless baseline > 0.
double reward(double latency_ms, double baseline_latency_ms, bool feasible);

// mean + sqrt(2 ln t / n). Throws PreconditionError when n == 0 or t < n.
double ucb1_score(double mean_reward, std::uint64_t pulls, std::uint64_t round);

// Per-arm statistics for one UCB1 run.
class BanditState {
public:
    explicit BanditState(std::size_t arm_count = kArmCount);

    std::size_t arm_count() const noexcept { return pulls_.size(); }
    std::uint64_t round() const noexcept { return round_; }
    std::uint64_t pulls(std::size_t arm) const { return pulls_.at(arm); }
    double mean(std::size_t arm) const { return means_.at(arm); }
    bool feasible_observed(std::size_t arm) const { return feasible_.at(arm); }
    bool initialized() const noexcept { return unpulled_ == 0; }

    // Highest mean among arms with a feasible observation, lowest index on ties.
    std::optional<std::size_t> best_feasible_arm() const;

    // Next arm: the first unpulled arm, then argmax UCB1 with lowest-index ties.
    std::size_t select() const;

    // Highest mean among feasible-observed arms, else among all pulled arms.
    std::size_t best_arm() const;

    double score(std::size_t arm) const { return ucb1_score(means_.at(arm), pulls_.at(arm), round_); }

    void update(std::size_t arm, double reward, bool feasible);

private:
    std::vector<std::uint64_t> pulls_;
    std::vector<double> means_;
    std::vector<bool> feasible_;
    std::uint64_t round_ = 0;
    std::size_t unpulled_;
};

struct SearchConfig {
    std::size_t max_iterations = 100;
    double ci_width_threshold = 0.2;
    std::uint64_t confidence_pulls = 5;
    std::uint64_t seed = 0;
    double prune_factor = 1.5;  // cost-model pruning cutoff, in units of c_lat
    TeacherOptions teacher;

    // Throws PreconditionError when max_iterations < 64 or thresholds are not positive.
    void check() const;
};

enum class Termination { budget, ci_width, confident_feasible, error };

std::string_view to_string(Termination t);

struct SearchStep {
    std::size_t round = 0;  // 1-based
    int arm = 0;
    double reward = 0;
    double latency_ms = 0;  // predicted latency when not executed
    double memory_bytes = 0;
    bool feasible = false;
    bool executed = true;  // false when the cost model pruned the pull

    bool operator==(const SearchStep&) const = default;
};

struct SearchResult {
    std::string query_id;
    int chosen_arm = 0;
    std::vector<SearchStep> trace;
    Termination termination = Termination::budget;
    std::string error;  // set when an execution failed; trace holds the rounds before it

    std::size_t executed_pulls() const;
    bool operator==(const SearchResult&) const = default;
};

struct SearchInput {
    std::string query_id;
    const QueryIR& ir;
    const SchemaModel& schema;
    Constraints constraints;
    ResourceSnapshot resources;
    double baseline_latency_ms = 0;
};

// UCB1 over the 64 arms: one pull per arm in index order, then argmax UCB1
// until the budget runs out, the confidence interval of the best arm narrows
// below the threshold, or a feasible arm with enough pulls beats every other
// arm's upper bound. With a cost model, a pull whose predicted latency exceeds
// prune_factor * c_lat records reward -1 without executing.
SearchResult search(const SearchInput& input, EngineAdapter& executor, const SearchConfig& cfg,
                    const ForestModel* cost_model = nullptr);

// Cumulative regret sum(best_mean - reward_t) over the trace.
std::vector<double> regret_curve(std::span<const double> rewards, double true_best_mean);
std::vector<double> regret_curve(const SearchResult& result, double true_best_mean);

// {"query_id", "chosen_arm", "termination_reason", "rounds": [...]}
std::string search_result_to_json(const SearchResult& result);
SearchResult search_result_from_json(std::string_view text);

}  // namespace qplan
