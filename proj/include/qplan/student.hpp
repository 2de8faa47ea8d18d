#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qplan/bandit.hpp"
#include "qplan/cost_model.hpp"

namespace qplan {

inline constexpr std::size_t kStudentDim = 7;
inline constexpr std::string_view kStudentLayout = "phi13-v1/query7";

// Query-level part of a FeatureVector (everything except the plan flags).
std::vector<double> student_features(const FeatureVector& fv);

struct DistillationExample {
    std::string query_id;
    std::vector<double> features;
    int label = 0;
};

struct DistillationSet {
    std::size_t dim = kStudentDim;
    std::size_t classes = kArmCount;
    std::vector<DistillationExample> examples;

    // Throws PreconditionError on ragged features or out-of-range labels.
    void check() const;
    std::size_t distinct_labels() const;
};

struct FeaturizedQuery {
    std::string query_id;
    std::vector<double> features;
};

// One example per query labelled with its search result's chosen arm.
// Throws PreconditionError when a query has no search result.
DistillationSet build_distillation_set(std::span<const FeaturizedQuery> queries,
                                       const std::map<std::string, SearchResult, std::less<>>& results);

struct StudentPrediction {
    int arm = 0;
    std::vector<double> probabilities;
};

// Probabilities from raw class scores; argmax with lowest-index ties.
StudentPrediction softmax_prediction(std::span<const double> scores);

// --- linear softmax student ---------------------------------------------------------

struct LinearHyper {
    double learning_rate = 0.1;
    std::size_t epochs = 500;
    double l2 = 1e-4;
};

struct LinearStudent {
    std::size_t dim = kStudentDim;
    std::size_t classes = kArmCount;
    std::vector<double> mean;   // input standardisation
    std::vector<double> scale;
    std::vector<double> weights;  // classes x dim, row-major
    std::vector<double> bias;     // classes
    LinearHyper hyper;
    std::uint64_t seed = 0;
    std::vector<double> loss_history;  // loss before each epoch, then the final loss

    std::vector<double> scores(std::span<const double> x) const;
};

// Mean cross-entropy plus (l2 / 2) * ||W||^2 over the set, and its gradient
// with respect to weights (same layout) and bias.
struct LinearGradient {
    double loss = 0;
    std::vector<double> weights;
    std::vector<double> bias;
};

LinearGradient linear_loss_gradient(const LinearStudent& model, const DistillationSet& set, double l2);

// Throws TrainingError when the set holds fewer than two distinct labels.
LinearStudent train_linear(const DistillationSet& set, const LinearHyper& hyper = {}, std::uint64_t seed = 0);

// --- boosted-tree student -----------------------------------------------------------

struct BoostedHyper {
    std::size_t rounds = 50;
    double shrinkage = 0.1;
    int max_depth = 3;
    std::size_t min_samples_leaf = 2;
};

struct BoostedStudent {
    std::size_t dim = kStudentDim;
    std::size_t classes = kArmCount;
    std::vector<double> initial;    // per-class starting score
    std::vector<bool> present;      // classes seen in training; others never get trees
    std::vector<std::vector<RegressionTree>> rounds;  // rounds[m][k], empty tree for absent classes
    BoostedHyper hyper;
    std::uint64_t seed = 0;
    std::vector<double> loss_history;  // loss before round 1, then after each round

    std::vector<double> scores(std::span<const double> x) const;
};

// Throws PreconditionError when rounds == 0, TrainingError on a single-class set.
BoostedStudent train_boosted(const DistillationSet& set, const BoostedHyper& hyper = {}, std::uint64_t seed = 0);

// Throws DimensionMismatchError on a wrong feature count.
StudentPrediction student_predict(const LinearStudent& model, std::span<const double> x);
StudentPrediction student_predict(const BoostedStudent& model, std::span<const double> x);

double cross_entropy(const LinearStudent& model, const DistillationSet& set);
double cross_entropy(const BoostedStudent& model, const DistillationSet& set);

template <class Model>
double accuracy(const Model& model, const DistillationSet& set) {
    if (set.examples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& e : set.examples) hits += student_predict(model, e.features).arm == e.label;
    return static_cast<double>(hits) / static_cast<double>(set.examples.size());
}

// median(full_ms) / median(student_ms). Throws PreconditionError on empty input
// or a zero student median.
double measure_speedup(std::span<const double> full_ms, std::span<const double> student_ms);

std::string linear_to_json(const LinearStudent& model);
LinearStudent linear_from_json(std::string_view text);
std::string boosted_to_json(const BoostedStudent& model);
BoostedStudent boosted_from_json(std::string_view text);

}  // namespace qplan
