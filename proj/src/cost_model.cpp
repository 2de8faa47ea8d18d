#include "qplan/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <thread>

#include "qplan/error.hpp"
#include "qplan/rng.hpp"
#include "tree_json.hpp"

namespace qplan {

namespace {

void collect_columns(const QueryIR& ir, std::vector<ColumnRef>& out) {
    for (const auto& item : ir.projections) {
        if (item.column) out.push_back(*item.column);
        if (item.divisor) out.push_back(*item.divisor);
    }
    for (const auto& p : ir.predicates) out.push_back(p.column);
    for (const auto& j : ir.joins) {
        out.push_back(j.left);
        out.push_back(j.right);
    }
    for (const auto& c : ir.group_by) out.push_back(c);
    for (const auto& c : ir.order_by) out.push_back(c);
}

}  // namespace

FeatureVector featurize(const QueryIR& ir, PlanConfig config, const SchemaModel& schema,
                        const ResourceSnapshot& resources, const Constraints& constraints) {
    FeatureVector fv{};
    for (std::size_t i = 0; i < kStrategyCount; ++i) {
        fv[i] = config.enabled(static_cast<Strategy>(i)) ? 1.0 : 0.0;
    }
    const ComplexityMetrics m = complexity(ir);
    fv[6] = static_cast<double>(m.table_count);
    fv[7] = static_cast<double>(m.join_count);
    fv[8] = static_cast<double>(m.predicate_count);

    double rows = 0;
    for (const auto& ref : ir.base_tables) rows += static_cast<double>(schema.at(ref.table).row_count);
    fv[9] = std::log10(1.0 + rows);

    std::vector<ColumnRef> cols;
    collect_columns(ir, cols);
    double max_distinct = 0;
    for (const auto& c : cols) {
        const TableRef* ref = ir.find_alias(c.alias);
        if (ref == nullptr) continue;
        if (const ColumnStat* stat = schema.at(ref->table).find_column(c.column)) {
            max_distinct = std::max(max_distinct, static_cast<double>(stat->distinct_count));
        }
    }
    fv[10] = std::log10(1.0 + max_distinct);
    fv[11] = constraints.c_mem > 0 ? resources.memory_in_use / constraints.c_mem : 0.0;
    fv[12] = resources.cpu_load;
    return fv;
}

void Matrix::push_row(std::span<const double> values) {
    if (cols == 0 && data.empty()) cols = values.size();
    if (values.size() != cols) throw DimensionMismatchError(cols, values.size());
    data.insert(data.end(), values.begin(), values.end());
}

// ---------------------------------------------------------------------------
// trees

double RegressionTree::predict(std::span<const double> x) const {
    if (nodes_.empty()) return 0.0;
    int i = 0;
    while (nodes_[i].feature >= 0) {
        const auto& n = nodes_[i];
        i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes_[i].value;
}

int RegressionTree::depth() const {
    if (nodes_.empty()) return 0;
    std::vector<int> d(nodes_.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        best = std::max(best, d[i]);
        if (nodes_[i].feature >= 0) {
            d[nodes_[i].left] = d[i] + 1;
            d[nodes_[i].right] = d[i] + 1;
        }
    }
    return best;
}

namespace {

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, std::span<const double> y, const TreeParams& params, std::uint64_t seed)
        : x_(x), y_(y), params_(params), rng_(seed) {}

    std::vector<TreeNode> build(std::vector<std::size_t> rows) {
        grow(rows, 0);
        return std::move(nodes_);
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0;
        double gain = -1;
    };

    int grow(std::vector<std::size_t>& rows, int depth) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        double sum = 0;
        double lo = y_[rows.front()];
        double hi = lo;
        for (std::size_t r : rows) {
            sum += y_[r];
            lo = std::min(lo, y_[r]);
            hi = std::max(hi, y_[r]);
        }
        nodes_[id].value = sum / static_cast<double>(rows.size());
        nodes_[id].samples = rows.size();
        if (depth >= params_.max_depth || rows.size() < 2 * params_.min_samples_leaf || lo == hi) return id;

        const Split split = best_split(rows, sum);
        if (split.feature < 0) return id;

        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (std::size_t r : rows) {
            (x_.row(r)[static_cast<std::size_t>(split.feature)] <= split.threshold ? left : right).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        nodes_[id].feature = split.feature;
        nodes_[id].threshold = split.threshold;
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    // Random feature order when subsampling; constant features do not use up the budget.
    std::vector<std::size_t> feature_order() {
        std::vector<std::size_t> f(x_.cols);
        std::iota(f.begin(), f.end(), 0);
        if (params_.max_features > 0 && params_.max_features < f.size()) rng_.shuffle(f);
        return f;
    }

    Split best_split(const std::vector<std::size_t>& rows, double total) {
        const std::size_t n = rows.size();
        const double base = total * total / static_cast<double>(n);
        const std::size_t budget = params_.max_features > 0 ? params_.max_features : x_.cols;
        std::size_t visited = 0;
        Split best;
        std::vector<std::pair<double, double>> col(n);  // (x, y)
        for (std::size_t f : feature_order()) {
            if (visited == budget) break;
            for (std::size_t i = 0; i < n; ++i) col[i] = {x_.row(rows[i])[f], y_[rows[i]]};
            std::stable_sort(col.begin(), col.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            if (!(col.front().first < col.back().first)) continue;
            ++visited;
            double left = 0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                left += col[i].second;
                const std::size_t nl = i + 1;
                const std::size_t nr = n - nl;
                if (nl < params_.min_samples_leaf) continue;
                if (nr < params_.min_samples_leaf) break;
                if (!(col[i].first < col[i + 1].first)) continue;
                const double right = total - left;
                const double gain =
                    left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) - base;
                if (gain > best.gain) {
                    double t = 0.5 * (col[i].first + col[i + 1].first);
                    if (!(t < col[i + 1].first)) t = col[i].first;
                    best = {static_cast<int>(f), t, gain};
                }
            }
        }
        return best;
    }

    const Matrix& x_;
    std::span<const double> y_;
    TreeParams params_;
    rng::Stream rng_;
    std::vector<TreeNode> nodes_;
};

}  // namespace

RegressionTree fit_tree(const Matrix& x, std::span<const double> y, std::span<const std::size_t> rows,
                        const TreeParams& params, std::uint64_t feature_seed) {
    if (y.size() != x.rows()) throw DimensionMismatchError(x.rows(), y.size());
    if (rows.empty()) throw TrainingError("cannot grow a tree on zero samples");
    if (params.max_depth < 0) throw PreconditionError("max_depth must be non-negative");
    if (params.min_samples_leaf < 1) throw PreconditionError("min_samples_leaf must be at least 1");
    TreeBuilder builder(x, y, params, feature_seed);
    return RegressionTree(builder.build({rows.begin(), rows.end()}));
}

// ---------------------------------------------------------------------------
// forest

namespace {

std::uint64_t tree_seed(std::uint64_t seed, std::size_t t) { return rng::mix(seed, t + 1); }

void check_params(const ForestParams& p) {
    if (p.n_estimators < 1) throw PreconditionError("forest needs at least one estimator");
    if (p.min_samples_leaf < 1) throw PreconditionError("min_samples_leaf must be at least 1");
    if (p.max_depth < 0) throw PreconditionError("max_depth must be non-negative");
}

}  // namespace

std::vector<std::vector<std::size_t>> bootstrap_indices(std::size_t samples, const ForestParams& params,
                                                        std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> out(params.n_estimators);
    for (std::size_t t = 0; t < params.n_estimators; ++t) {
        auto& rows = out[t];
        rows.resize(samples);
        if (params.bootstrap) {
            rng::Stream s(rng::mix(tree_seed(seed, t), 0xb007));
            for (auto& r : rows) r = s.index(samples);
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
    }
    return out;
}

ForestModel train_forest(const Matrix& x, std::span<const double> y, const ForestParams& params, std::uint64_t seed) {
    check_params(params);
    if (x.rows() < 2 * params.min_samples_leaf) {
        throw TrainingError("need at least " + std::to_string(2 * params.min_samples_leaf) + " samples, got " +
                            std::to_string(x.rows()));
    }
    return train_forest(x, y, params, seed, bootstrap_indices(x.rows(), params, seed));
}

ForestModel train_forest(const Matrix& x, std::span<const double> y, const ForestParams& params, std::uint64_t seed,
                         const std::vector<std::vector<std::size_t>>& bootstrap_rows) {
    check_params(params);
    if (y.size() != x.rows()) throw DimensionMismatchError(x.rows(), y.size());
    if (x.rows() < 2 * params.min_samples_leaf) {
        throw TrainingError("need at least " + std::to_string(2 * params.min_samples_leaf) + " samples, got " +
                            std::to_string(x.rows()));
    }
    if (bootstrap_rows.size() != params.n_estimators) {
        throw PreconditionError("one bootstrap sample per estimator is required");
    }
    ForestModel model;
    model.dim = x.cols;
    model.params = params;
    model.seed = seed;
    model.trees.resize(params.n_estimators);
    const TreeParams tp{params.max_depth, params.min_samples_leaf, params.max_features};

    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(params.n_estimators, std::thread::hardware_concurrency()));
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w) {
        jobs.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t t = w; t < params.n_estimators; t += workers) {
                model.trees[t] = fit_tree(x, y, bootstrap_rows[t], tp, rng::mix(tree_seed(seed, t), 0xfea7));
            }
        }));
    }
    for (auto& j : jobs) j.get();
    return model;
}

double predict(const ForestModel& model, std::span<const double> x) {
    if (x.size() != model.dim) throw DimensionMismatchError(model.dim, x.size());
    if (model.trees.empty()) return 0.0;
    double sum = 0;
    for (const auto& t : model.trees) sum += t.predict(x);
    return std::max(0.0, sum / static_cast<double>(model.trees.size()));
}

PredictionSpread predict_spread(const ForestModel& model, std::span<const double> x) {
    if (x.size() != model.dim) throw DimensionMismatchError(model.dim, x.size());
    if (model.trees.empty()) return {};
    PredictionSpread s{model.trees.front().predict(x), model.trees.front().predict(x)};
    for (const auto& t : model.trees) {
        const double v = t.predict(x);
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.min = std::max(0.0, s.min);
    s.max = std::max(0.0, s.max);
    return s;
}

ModelEvaluation evaluate_model(const ForestModel& model, const Matrix& x, std::span<const double> y) {
    if (y.empty()) throw PreconditionError("held-out set is empty");
    if (y.size() != x.rows()) throw DimensionMismatchError(x.rows(), y.size());
    ModelEvaluation e;
    e.samples = y.size();
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double abs = 0;
    double ss_res = 0;
    double ss_tot = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = predict(model, x.row(i));
        abs += std::abs(p - y[i]);
        ss_res += (p - y[i]) * (p - y[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    e.mae = abs / static_cast<double>(y.size());
    if (ss_tot > 0) e.r_squared = 1.0 - ss_res / ss_tot;
    return e;
}

CrossValidation cross_validate_depth(const Matrix& x, std::span<const double> y, const ForestParams& base,
                                     const std::vector<int>& depths, std::size_t folds, std::uint64_t seed) {
    if (depths.empty()) throw PreconditionError("no candidate depths");
    if (folds < 2 || folds > x.rows()) throw PreconditionError("fold count must lie in [2, samples]");
    std::vector<std::size_t> order(x.rows());
    std::iota(order.begin(), order.end(), 0);
    rng::Stream s(rng::mix(seed, 0xcf));
    s.shuffle(order);

    CrossValidation cv;
    double best = 0;
    for (int depth : depths) {
        ForestParams p = base;
        p.max_depth = depth;
        double total = 0;
        for (std::size_t k = 0; k < folds; ++k) {
            Matrix train{x.cols, {}};
            Matrix test{x.cols, {}};
            std::vector<double> ytrain;
            std::vector<double> ytest;
            for (std::size_t i = 0; i < order.size(); ++i) {
                const bool held = i % folds == k;
                (held ? test : train).push_row(x.row(order[i]));
                (held ? ytest : ytrain).push_back(y[order[i]]);
            }
            total += evaluate_model(train_forest(train, ytrain, p, rng::mix(seed, k)), test, ytest).mae;
        }
        const double mae = total / static_cast<double>(folds);
        cv.mae_by_depth.emplace_back(depth, mae);
        if (cv.mae_by_depth.size() == 1 || mae < best) {
            best = mae;
            cv.chosen_depth = depth;
        }
    }
    return cv;
}

// ---------------------------------------------------------------------------
// serialization

namespace detail {

const nlohmann::ordered_json& require(const nlohmann::ordered_json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
    return j.at(key);
}

nlohmann::ordered_json tree_to_json(const RegressionTree& tree) {
    auto feature = nlohmann::ordered_json::array();
    auto threshold = nlohmann::ordered_json::array();
    auto left = nlohmann::ordered_json::array();
    auto right = nlohmann::ordered_json::array();
    auto value = nlohmann::ordered_json::array();
    auto samples = nlohmann::ordered_json::array();
    for (const auto& n : tree.nodes()) {
        feature.push_back(n.feature);
        threshold.push_back(n.threshold);
        left.push_back(n.left);
        right.push_back(n.right);
        value.push_back(n.value);
        samples.push_back(n.samples);
    }
    nlohmann::ordered_json j;
    j["feature"] = std::move(feature);
    j["threshold"] = std::move(threshold);
    j["left"] = std::move(left);
    j["right"] = std::move(right);
    j["value"] = std::move(value);
    j["samples"] = std::move(samples);
    return j;
}

RegressionTree tree_from_json(const nlohmann::ordered_json& j, std::size_t dim) {
    try {
        const auto& feature = require(j, "feature");
        const std::size_t n = feature.size();
        std::vector<TreeNode> nodes(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto& node = nodes[i];
            node.feature = feature.at(i).get<int>();
            node.threshold = require(j, "threshold").at(i).get<double>();
            node.left = require(j, "left").at(i).get<int>();
            node.right = require(j, "right").at(i).get<int>();
            node.value = require(j, "value").at(i).get<double>();
            node.samples = require(j, "samples").at(i).get<std::size_t>();
            if (node.feature >= 0) {
                const auto bad = [n, i](int c) { return c <= static_cast<int>(i) || c >= static_cast<int>(n); };
                if (static_cast<std::size_t>(node.feature) >= dim || bad(node.left) || bad(node.right)) {
                    throw FormatError("tree node " + std::to_string(i) + " is malformed");
                }
            }
        }
        return RegressionTree(std::move(nodes));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed tree: ") + e.what());
    }
}

}  // namespace detail

std::string forest_to_json(const ForestModel& model) {
    nlohmann::ordered_json j;
    j["format"] = "qplan-forest";
    j["version"] = 1;
    j["layout"] = model.layout;
    j["dim"] = model.dim;
    j["seed"] = model.seed;
    j["params"] = {{"n_estimators", model.params.n_estimators},
                   {"max_depth", model.params.max_depth},
                   {"min_samples_leaf", model.params.min_samples_leaf},
                   {"max_features", model.params.max_features},
                   {"bootstrap", model.params.bootstrap}};
    auto& trees = j["trees"] = nlohmann::ordered_json::array();
    for (const auto& t : model.trees) trees.push_back(detail::tree_to_json(t));
    return j.dump(1);
}

ForestModel forest_from_json(std::string_view text) {
    using detail::require;
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("forest model is not valid JSON: ") + e.what());
    }
    try {
        if (require(j, "format").get<std::string>() != "qplan-forest") throw FormatError("not a forest model");
        if (require(j, "version").get<int>() != 1) throw FormatError("unsupported forest model version");
        ForestModel m;
        m.layout = require(j, "layout").get<std::string>();
        if (m.layout != kFeatureLayout) {
            throw FormatError("feature layout '" + m.layout + "' does not match '" + std::string(kFeatureLayout) + "'");
        }
        m.dim = require(j, "dim").get<std::size_t>();
        if (m.dim != kFeatureDim) throw FormatError("forest dimension does not match the feature layout");
        m.seed = require(j, "seed").get<std::uint64_t>();
        const auto& p = require(j, "params");
        m.params.n_estimators = require(p, "n_estimators").get<std::size_t>();
        m.params.max_depth = require(p, "max_depth").get<int>();
        m.params.min_samples_leaf = require(p, "min_samples_leaf").get<std::size_t>();
        m.params.max_features = require(p, "max_features").get<std::size_t>();
        m.params.bootstrap = require(p, "bootstrap").get<bool>();
        for (const auto& t : require(j, "trees")) m.trees.push_back(detail::tree_from_json(t, m.dim));
        if (m.trees.size() != m.params.n_estimators) throw FormatError("tree count does not match n_estimators");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed forest model: ") + e.what());
    }
}

}  // namespace qplan
