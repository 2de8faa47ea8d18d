#include "qplan/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "qplan/error.hpp"

namespace qplan {

double reward(double latency_ms, double baseline_latency_ms, bool feasible) {
    if (!(baseline_latency_ms > 0)) throw PreconditionError("baseline latency must be positive");
    if (!feasible) return -1.0;
    return std::clamp(1.0 - latency_ms / baseline_latency_ms, -1.0, 1.0);
}

double ucb1_score(double mean_reward, std::uint64_t pulls, std::uint64_t round) {
    if (pulls == 0) throw PreconditionError("arm has not been pulled yet");
    if (round < pulls) throw PreconditionError("round counter is below the arm's pull count");
    return mean_reward + std::sqrt(2.0 * std::log(static_cast<double>(round)) / static_cast<double>(pulls));
}

BanditState::BanditState(std::size_t arm_count)
    : pulls_(arm_count, 0), means_(arm_count, 0.0), feasible_(arm_count, false), unpulled_(arm_count) {
    if (arm_count == 0) throw PreconditionError("bandit needs at least one arm");
}

std::optional<std::size_t> BanditState::best_feasible_arm() const {
    std::optional<std::size_t> best;
    for (std::size_t a = 0; a < arm_count(); ++a) {
        if (feasible_[a] && (!best || means_[a] > means_[*best])) best = a;
    }
    return best;
}

std::size_t BanditState::select() const {
    std::size_t best = 0;
    double best_score = 0;
    for (std::size_t a = 0; a < arm_count(); ++a) {
        if (pulls_[a] == 0) return a;
        const double s = score(a);
        if (a == 0 || s > best_score) {
            best = a;
            best_score = s;
        }
    }
    return best;
}

std::size_t BanditState::best_arm() const {
    if (auto f = best_feasible_arm()) return *f;
    std::optional<std::size_t> best;
    for (std::size_t a = 0; a < arm_count(); ++a) {
        if (pulls_[a] > 0 && (!best || means_[a] > means_[*best])) best = a;
    }
    return best.value_or(0);
}

void BanditState::update(std::size_t arm, double r, bool feasible) {
    if (arm >= arm_count()) throw PreconditionError("arm index out of range");
    if (pulls_[arm] == 0) --unpulled_;
    ++pulls_[arm];
    ++round_;
    means_[arm] += (r - means_[arm]) / static_cast<double>(pulls_[arm]);
    if (feasible) feasible_[arm] = true;
}

void SearchConfig::check() const {
    if (max_iterations < static_cast<std::size_t>(kArmCount)) {
        throw PreconditionError("max_iterations must be at least " + std::to_string(kArmCount));
    }
    if (!(ci_width_threshold > 0)) throw PreconditionError("ci_width_threshold must be positive");
    if (confidence_pulls < 1) throw PreconditionError("confidence_pulls must be at least 1");
    if (!(prune_factor > 0)) throw PreconditionError("prune_factor must be positive");
}

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::budget: return "budget";
        case Termination::ci_width: return "ci_width";
        case Termination::confident_feasible: return "confident_feasible";
        case Termination::error: return "error";
    }
    return "?";
}

std::size_t SearchResult::executed_pulls() const {
    return static_cast<std::size_t>(std::count_if(trace.begin(), trace.end(), [](const auto& s) { return s.executed; }));
}

namespace {

bool confident(const BanditState& st, std::size_t arm, std::uint64_t min_pulls) {
    if (!st.feasible_observed(arm) || st.pulls(arm) < min_pulls) return false;
    for (std::size_t a = 0; a < st.arm_count(); ++a) {
        if (a != arm && !(st.mean(arm) > st.score(a))) return false;
    }
    return true;
}

}  // namespace

SearchResult search(const SearchInput& input, EngineAdapter& executor, const SearchConfig& cfg,
                    const ForestModel* cost_model) {
    cfg.check();
    input.constraints.check();
    if (!(input.baseline_latency_ms > 0)) throw PreconditionError("baseline latency must be positive");

    SearchResult result;
    result.query_id = input.query_id;
    BanditState state(kArmCount);
    std::map<int, PlanCandidate> candidates;
    std::map<int, std::string> sql;

    while (result.trace.size() < cfg.max_iterations) {
        const int arm = static_cast<int>(state.select());
        const PlanConfig config = PlanConfig::from_arm(arm);
        auto it = candidates.find(arm);
        if (it == candidates.end()) {
            it = candidates.emplace(arm, apply_plan(input.ir, config, input.schema, cfg.teacher)).first;
            sql.emplace(arm, render_sql(it->second.ir));
        }

        SearchStep step;
        step.round = result.trace.size() + 1;
        step.arm = arm;
        bool pruned = false;
        if (cost_model != nullptr) {
            const FeatureVector fv = featurize(input.ir, config, input.schema, input.resources, input.constraints);
            const double predicted = predict(*cost_model, fv);
            if (predicted > cfg.prune_factor * input.constraints.c_lat) {
                pruned = true;
                step.executed = false;
                step.latency_ms = predicted;
                step.feasible = false;
                step.reward = -1.0;
            }
        }
        if (!pruned) {
            Measurement m;
            try {
                m = executor.execute({input.query_id, it->second, input.ir, sql.at(arm), input.constraints,
                                      input.resources, cfg.seed});
            } catch (const Error& e) {
                result.termination = Termination::error;
                result.error = e.what();
                result.chosen_arm = static_cast<int>(state.best_arm());
                return result;
            }
            step.latency_ms = m.latency_ms;
            step.memory_bytes = m.memory_bytes;
            step.feasible = check_feasible(m.latency_ms, m.memory_bytes, input.constraints);
            step.reward = reward(m.latency_ms, input.baseline_latency_ms, step.feasible);
        }
        state.update(static_cast<std::size_t>(arm), step.reward, step.feasible);
        result.trace.push_back(step);

        if (!state.initialized()) continue;
        const std::size_t best = state.best_arm();
        const double width =
            2.0 * std::sqrt(2.0 * std::log(static_cast<double>(state.round())) / static_cast<double>(state.pulls(best)));
        if (width < cfg.ci_width_threshold) {
            result.termination = Termination::ci_width;
            break;
        }
        if (auto f = state.best_feasible_arm(); f && confident(state, *f, cfg.confidence_pulls)) {
            result.termination = Termination::confident_feasible;
            break;
        }
    }
    result.chosen_arm = static_cast<int>(state.best_arm());
    return result;
}

std::vector<double> regret_curve(std::span<const double> rewards, double true_best_mean) {
    std::vector<double> out;
    out.reserve(rewards.size());
    double total = 0;
    for (double r : rewards) {
        total += true_best_mean - r;
        out.push_back(total);
    }
    return out;
}

std::vector<double> regret_curve(const SearchResult& result, double true_best_mean) {
    std::vector<double> rewards;
    for (const auto& s : result.trace) rewards.push_back(s.reward);
    return regret_curve(rewards, true_best_mean);
}

std::string search_result_to_json(const SearchResult& result) {
    nlohmann::ordered_json j;
    j["query_id"] = result.query_id;
    j["chosen_arm"] = result.chosen_arm;
    j["termination_reason"] = std::string(to_string(result.termination));
    if (!result.error.empty()) j["error"] = result.error;
    auto& rounds = j["rounds"] = nlohmann::ordered_json::array();
    for (const auto& s : result.trace) {
        rounds.push_back({{"round", s.round},
                          {"arm", s.arm},
                          {"reward", s.reward},
                          {"latency_ms", s.latency_ms},
                          {"memory_bytes", s.memory_bytes},
                          {"feasible", s.feasible},
                          {"executed", s.executed}});
    }
    return j.dump();
}

SearchResult search_result_from_json(std::string_view text) {
    try {
        const auto j = nlohmann::ordered_json::parse(text);
        SearchResult r;
        r.query_id = j.at("query_id").get<std::string>();
        r.chosen_arm = j.at("chosen_arm").get<int>();
        PlanConfig::from_arm(r.chosen_arm);
        const auto reason = j.at("termination_reason").get<std::string>();
        bool known = false;
        for (auto t : {Termination::budget, Termination::ci_width, Termination::confident_feasible, Termination::error}) {
            if (reason == to_string(t)) {
                r.termination = t;
                known = true;
            }
        }
        if (!known) throw FormatError("unknown termination reason '" + reason + "'");
        if (j.contains("error")) r.error = j.at("error").get<std::string>();
        for (const auto& s : j.at("rounds")) {
            r.trace.push_back({s.at("round").get<std::size_t>(), s.at("arm").get<int>(), s.at("reward").get<double>(),
                               s.at("latency_ms").get<double>(), s.at("memory_bytes").get<double>(),
                               s.at("feasible").get<bool>(), s.at("executed").get<bool>()});
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed search result: ") + e.what());
    } catch (const PreconditionError& e) {
        throw FormatError(e.what());
    }
}

}  // namespace qplan
