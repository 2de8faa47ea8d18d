#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qplan/engine.hpp"
#include "qplan/query_ir.hpp"
#include "qplan/schema.hpp"
#include "qplan/teacher.hpp"

namespace qplan {

inline constexpr std::size_t kFeatureDim = 13;
inline constexpr std::string_view kFeatureLayout = "phi13-v1";

// [6 plan flags] [table_count, join_count, predicate_count]
// [log10(1 + sum of referenced row counts), log10(1 + max referenced distinct)]
// [memory_in_use / c_mem, cpu_load]
using FeatureVector = std::array<double, kFeatureDim>;

FeatureVector featurize(const QueryIR& ir, PlanConfig config, const SchemaModel& schema,
                        const ResourceSnapshot& resources, const Constraints& constraints);

// --- regression trees -------------------------------------------------------------

// Row-major design matrix.
struct Matrix {
    std::size_t cols = 0;
    std::vector<double> data;

    std::size_t rows() const noexcept { return cols == 0 ? 0 : data.size() / cols; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    void push_row(std::span<const double> values);
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0;
    int left = -1;
    int right = -1;
    double value = 0;
    std::size_t samples = 0;

    bool operator==(const TreeNode&) const = default;
};

struct TreeParams {
    int max_depth = 8;
    std::size_t min_samples_leaf = 2;
    std::size_t max_features = 0;  // 0 = all features at every split
};

// Axis-aligned least-squares tree; leaves hold the mean of their targets.
// Samples go left when x[feature] <= threshold.
class RegressionTree {
public:
    RegressionTree() = default;
    explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

    double predict(std::span<const double> x) const;
    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    int depth() const;

    bool operator==(const RegressionTree&) const = default;

private:
    std::vector<TreeNode> nodes_;
};

// Grows a tree on the listed rows (repeats allowed). `feature_seed` drives the
// per-split feature subsample when params.max_features > 0.
RegressionTree fit_tree(const Matrix& x, std::span<const double> y, std::span<const std::size_t> rows,
                        const TreeParams& params, std::uint64_t feature_seed = 0);

// --- forest -------------------------------------------------------------------------

struct ForestParams {
    std::size_t n_estimators = 50;
    int max_depth = 8;
    std::size_t min_samples_leaf = 2;
    std::size_t max_features = 5;
    bool bootstrap = true;

    bool operator==(const ForestParams&) const = default;
};

struct ForestModel {
    std::string layout{kFeatureLayout};
    std::size_t dim = kFeatureDim;
    ForestParams params;
    std::uint64_t seed = 0;
    std::vector<RegressionTree> trees;
};

// Throws TrainingError with fewer than 2 * min_samples_leaf samples.
ForestModel train_forest(const Matrix& x, std::span<const double> y, const ForestParams& params, std::uint64_t seed);

// Same, with the bootstrap resamples given explicitly (one index list per tree).
ForestModel train_forest(const Matrix& x, std::span<const double> y, const ForestParams& params, std::uint64_t seed,
                         const std::vector<std::vector<std::size_t>>& bootstrap_rows);

// The resamples train_forest draws for a given sample count and seed.
std::vector<std::vector<std::size_t>> bootstrap_indices(std::size_t samples, const ForestParams& params,
                                                        std::uint64_t seed);

// Mean of tree outputs clamped at 0. Throws DimensionMismatchError.
double predict(const ForestModel& model, std::span<const double> x);

struct PredictionSpread {
    double min = 0;
    double max = 0;
};

PredictionSpread predict_spread(const ForestModel& model, std::span<const double> x);

struct ModelEvaluation {
    double mae = 0;
    std::optional<double> r_squared;  // empty when the targets have zero variance
    std::size_t samples = 0;
};

ModelEvaluation evaluate_model(const ForestModel& model, const Matrix& x, std::span<const double> y);

struct CrossValidation {
    int chosen_depth = 8;
    std::vector<std::pair<int, double>> mae_by_depth;
};

// k-fold CV over candidate depths; picks the lowest mean MAE, shallower on ties.
CrossValidation cross_validate_depth(const Matrix& x, std::span<const double> y, const ForestParams& base,
                                     const std::vector<int>& depths, std::size_t folds, std::uint64_t seed);

std::string forest_to_json(const ForestModel& model);
// Throws FormatError on malformed input or a different feature layout.
ForestModel forest_from_json(std::string_view text);

}  // namespace qplan
