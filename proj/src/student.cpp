#include "qplan/student.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "qplan/error.hpp"
#include "tree_json.hpp"

namespace qplan {

namespace {

using json = nlohmann::ordered_json;

// Starting score of classes absent from the training labels.
constexpr double kAbsentScore = -13.815510557964274;  // log(1e-6)

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void softmax_inplace(std::vector<double>& s) {
    const double hi = *std::max_element(s.begin(), s.end());
    double total = 0;
    for (auto& v : s) {
        v = std::exp(v - hi);
        total += v;
    }
    for (auto& v : s) v /= total;
}

void check_trainable(const DistillationSet& set) {
    set.check();
    if (set.distinct_labels() < 2) {
        throw TrainingError("distillation set has fewer than two distinct labels; a classifier is undefined");
    }
}

}  // namespace

std::vector<double> student_features(const FeatureVector& fv) {
    return {fv.begin() + kStrategyCount, fv.end()};
}

void DistillationSet::check() const {
    if (dim == 0 || classes < 1) throw PreconditionError("distillation set needs a positive dimension and class count");
    for (const auto& e : examples) {
        if (e.features.size() != dim) throw DimensionMismatchError(dim, e.features.size());
        if (e.label < 0 || static_cast<std::size_t>(e.label) >= classes) {
            throw PreconditionError("label " + std::to_string(e.label) + " is outside [0, " +
                                    std::to_string(classes - 1) + "]");
        }
    }
}

std::size_t DistillationSet::distinct_labels() const {
    std::set<int> labels;
    for (const auto& e : examples) labels.insert(e.label);
    return labels.size();
}

DistillationSet build_distillation_set(std::span<const FeaturizedQuery> queries,
                                       const std::map<std::string, SearchResult, std::less<>>& results) {
    DistillationSet set;
    for (const auto& q : queries) {
        auto it = results.find(q.query_id);
        if (it == results.end()) throw PreconditionError("no search result for query '" + q.query_id + "'");
        if (q.features.size() != set.dim) throw DimensionMismatchError(set.dim, q.features.size());
        set.examples.push_back({q.query_id, q.features, it->second.chosen_arm});
    }
    set.check();
    return set;
}

StudentPrediction softmax_prediction(std::span<const double> scores) {
    StudentPrediction p;
    p.probabilities.assign(scores.begin(), scores.end());
    if (p.probabilities.empty()) return p;
    softmax_inplace(p.probabilities);
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k) {
        if (scores[k] > scores[best]) best = k;
    }
    p.arm = static_cast<int>(best);
    return p;
}

// ---------------------------------------------------------------------------
// linear

std::vector<double> LinearStudent::scores(std::span<const double> x) const {
    if (x.size() != dim) throw DimensionMismatchError(dim, x.size());
    std::vector<double> z(dim);
    for (std::size_t d = 0; d < dim; ++d) z[d] = (x[d] - mean[d]) / scale[d];
    std::vector<double> s(bias);
    for (std::size_t k = 0; k < classes; ++k) {
        const double* w = weights.data() + k * dim;
        for (std::size_t d = 0; d < dim; ++d) s[k] += w[d] * z[d];
    }
    return s;
}

LinearGradient linear_loss_gradient(const LinearStudent& model, const DistillationSet& set, double l2) {
    LinearGradient g;
    g.weights.assign(model.weights.size(), 0.0);
    g.bias.assign(model.classes, 0.0);
    const double n = static_cast<double>(set.examples.size());
    std::vector<double> z(model.dim);
    for (const auto& e : set.examples) {
        for (std::size_t d = 0; d < model.dim; ++d) z[d] = (e.features[d] - model.mean[d]) / model.scale[d];
        std::vector<double> p = model.scores(e.features);
        softmax_inplace(p);
        g.loss -= std::log(std::max(p[static_cast<std::size_t>(e.label)], 1e-300)) / n;
        p[static_cast<std::size_t>(e.label)] -= 1.0;
        for (std::size_t k = 0; k < model.classes; ++k) {
            g.bias[k] += p[k] / n;
            double* w = g.weights.data() + k * model.dim;
            for (std::size_t d = 0; d < model.dim; ++d) w[d] += p[k] * z[d] / n;
        }
    }
    double norm = 0;
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
        norm += model.weights[i] * model.weights[i];
        g.weights[i] += l2 * model.weights[i];
    }
    g.loss += 0.5 * l2 * norm;
    return g;
}

LinearStudent train_linear(const DistillationSet& set, const LinearHyper& hyper, std::uint64_t seed) {
    check_trainable(set);
    if (!(hyper.learning_rate > 0) || hyper.l2 < 0) throw PreconditionError("invalid linear student hyperparameters");
    LinearStudent m;
    m.dim = set.dim;
    m.classes = set.classes;
    m.hyper = hyper;
    m.seed = seed;
    m.mean.assign(m.dim, 0.0);
    m.scale.assign(m.dim, 1.0);
    const double n = static_cast<double>(set.examples.size());
    for (const auto& e : set.examples) {
        for (std::size_t d = 0; d < m.dim; ++d) m.mean[d] += e.features[d] / n;
    }
    for (std::size_t d = 0; d < m.dim; ++d) {
        double var = 0;
        for (const auto& e : set.examples) var += (e.features[d] - m.mean[d]) * (e.features[d] - m.mean[d]) / n;
        m.scale[d] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    m.weights.assign(m.classes * m.dim, 0.0);
    m.bias.assign(m.classes, 0.0);

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        const LinearGradient g = linear_loss_gradient(m, set, hyper.l2);
        m.loss_history.push_back(g.loss);
        for (std::size_t i = 0; i < m.weights.size(); ++i) m.weights[i] -= hyper.learning_rate * g.weights[i];
        for (std::size_t k = 0; k < m.classes; ++k) m.bias[k] -= hyper.learning_rate * g.bias[k];
    }
    m.loss_history.push_back(linear_loss_gradient(m, set, hyper.l2).loss);
    return m;
}

double cross_entropy(const LinearStudent& model, const DistillationSet& set) {
    return linear_loss_gradient(model, set, 0.0).loss;
}

StudentPrediction student_predict(const LinearStudent& model, std::span<const double> x) {
    return softmax_prediction(model.scores(x));
}

// ---------------------------------------------------------------------------
// boosted

std::vector<double> BoostedStudent::scores(std::span<const double> x) const {
    if (x.size() != dim) throw DimensionMismatchError(dim, x.size());
    std::vector<double> s(initial);
    for (const auto& round : rounds) {
        for (std::size_t k = 0; k < classes; ++k) {
            if (present[k]) s[k] += hyper.shrinkage * round[k].predict(x);
        }
    }
    return s;
}

namespace {

double boosted_loss(const std::vector<std::vector<double>>& scores, const DistillationSet& set) {
    double loss = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::vector<double> p = scores[i];
        softmax_inplace(p);
        loss -= std::log(std::max(p[static_cast<std::size_t>(set.examples[i].label)], 1e-300));
    }
    return loss / static_cast<double>(scores.size());
}

}  // namespace

BoostedStudent train_boosted(const DistillationSet& set, const BoostedHyper& hyper, std::uint64_t seed) {
    if (hyper.rounds < 1) throw PreconditionError("boosted student needs at least one round");
    if (!(hyper.shrinkage > 0)) throw PreconditionError("shrinkage must be positive");
    check_trainable(set);
    BoostedStudent m;
    m.dim = set.dim;
    m.classes = set.classes;
    m.hyper = hyper;
    m.seed = seed;

    const std::size_t n = set.examples.size();
    std::vector<double> counts(m.classes, 0.0);
    for (const auto& e : set.examples) counts[static_cast<std::size_t>(e.label)] += 1.0;
    m.present.resize(m.classes);
    m.initial.resize(m.classes);
    for (std::size_t k = 0; k < m.classes; ++k) {
        m.present[k] = counts[k] > 0;
        m.initial[k] = m.present[k] ? std::log(counts[k] / static_cast<double>(n)) : kAbsentScore;
    }

    Matrix x{m.dim, {}};
    for (const auto& e : set.examples) x.push_row(e.features);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<std::vector<double>> f(n, m.initial);
    const TreeParams tp{hyper.max_depth, hyper.min_samples_leaf, 0};

    m.loss_history.push_back(boosted_loss(f, set));
    std::vector<double> residual(n);
    for (std::size_t round = 0; round < hyper.rounds; ++round) {
        std::vector<std::vector<double>> p = f;
        for (auto& row : p) softmax_inplace(row);
        std::vector<RegressionTree> trees(m.classes);
        for (std::size_t k = 0; k < m.classes; ++k) {
            if (!m.present[k]) continue;
            for (std::size_t i = 0; i < n; ++i) {
                residual[i] = (set.examples[i].label == static_cast<int>(k) ? 1.0 : 0.0) - p[i][k];
            }
            trees[k] = fit_tree(x, residual, rows, tp);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < m.classes; ++k) {
                if (m.present[k]) f[i][k] += hyper.shrinkage * trees[k].predict(x.row(i));
            }
        }
        m.rounds.push_back(std::move(trees));
        m.loss_history.push_back(boosted_loss(f, set));
    }
    return m;
}

double cross_entropy(const BoostedStudent& model, const DistillationSet& set) {
    std::vector<std::vector<double>> s;
    for (const auto& e : set.examples) s.push_back(model.scores(e.features));
    return s.empty() ? 0.0 : boosted_loss(s, set);
}

StudentPrediction student_predict(const BoostedStudent& model, std::span<const double> x) {
    return softmax_prediction(model.scores(x));
}

double measure_speedup(std::span<const double> full_ms, std::span<const double> student_ms) {
    if (full_ms.empty() || student_ms.empty()) throw PreconditionError("speedup needs timings for both planners");
    const double s = median({student_ms.begin(), student_ms.end()});
    if (!(s > 0)) throw PreconditionError("student median time is zero");
    return median({full_ms.begin(), full_ms.end()}) / s;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json header(const char* format, std::size_t dim, std::size_t classes, std::uint64_t seed) {
    json j;
    j["format"] = format;
    j["version"] = 1;
    j["layout"] = kStudentLayout;
    j["dim"] = dim;
    j["classes"] = classes;
    j["seed"] = seed;
    return j;
}

json parse_header(std::string_view text, const char* format) {
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("student model is not valid JSON: ") + e.what());
    }
    if (detail::require(j, "format") != format) throw FormatError(std::string("not a ") + format + " model");
    if (detail::require(j, "version") != 1) throw FormatError("unsupported student model version");
    if (detail::require(j, "layout") != kStudentLayout) {
        throw FormatError("feature layout '" + j["layout"].dump() + "' does not match '" + std::string(kStudentLayout) +
                          "'");
    }
    return j;
}

template <class T>
std::vector<T> sized(const json& j, const char* key, std::size_t n) {
    auto v = detail::require(j, key).get<std::vector<T>>();
    if (v.size() != n) throw FormatError(std::string("field '") + key + "' has the wrong length");
    return v;
}

}  // namespace

std::string linear_to_json(const LinearStudent& m) {
    json j = header("qplan-student-linear", m.dim, m.classes, m.seed);
    j["hyper"] = {{"learning_rate", m.hyper.learning_rate}, {"epochs", m.hyper.epochs}, {"l2", m.hyper.l2}};
    j["mean"] = m.mean;
    j["scale"] = m.scale;
    j["weights"] = m.weights;
    j["bias"] = m.bias;
    return j.dump(1);
}

LinearStudent linear_from_json(std::string_view text) {
    const json j = parse_header(text, "qplan-student-linear");
    try {
        LinearStudent m;
        m.dim = j.at("dim").get<std::size_t>();
        m.classes = j.at("classes").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        const auto& h = detail::require(j, "hyper");
        m.hyper = {h.at("learning_rate").get<double>(), h.at("epochs").get<std::size_t>(), h.at("l2").get<double>()};
        m.mean = sized<double>(j, "mean", m.dim);
        m.scale = sized<double>(j, "scale", m.dim);
        m.weights = sized<double>(j, "weights", m.dim * m.classes);
        m.bias = sized<double>(j, "bias", m.classes);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed linear student: ") + e.what());
    }
}

std::string boosted_to_json(const BoostedStudent& m) {
    json j = header("qplan-student-boosted", m.dim, m.classes, m.seed);
    j["hyper"] = {{"rounds", m.hyper.rounds},
                  {"shrinkage", m.hyper.shrinkage},
                  {"max_depth", m.hyper.max_depth},
                  {"min_samples_leaf", m.hyper.min_samples_leaf}};
    j["initial"] = m.initial;
    j["present"] = m.present;
    auto& rounds = j["rounds"] = json::array();
    for (const auto& round : m.rounds) {
        json r = json::array();
        for (std::size_t k = 0; k < m.classes; ++k) {
            r.push_back(m.present[k] ? detail::tree_to_json(round[k]) : json(nullptr));
        }
        rounds.push_back(std::move(r));
    }
    return j.dump(1);
}

BoostedStudent boosted_from_json(std::string_view text) {
    const json j = parse_header(text, "qplan-student-boosted");
    try {
        BoostedStudent m;
        m.dim = j.at("dim").get<std::size_t>();
        m.classes = j.at("classes").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        const auto& h = detail::require(j, "hyper");
        m.hyper = {h.at("rounds").get<std::size_t>(), h.at("shrinkage").get<double>(), h.at("max_depth").get<int>(),
                   h.at("min_samples_leaf").get<std::size_t>()};
        m.initial = sized<double>(j, "initial", m.classes);
        m.present = sized<bool>(j, "present", m.classes);
        for (const auto& r : detail::require(j, "rounds")) {
            if (r.size() != m.classes) throw FormatError("boosting round has the wrong class count");
            std::vector<RegressionTree> trees(m.classes);
            for (std::size_t k = 0; k < m.classes; ++k) {
                if (m.present[k]) trees[k] = detail::tree_from_json(r.at(k), m.dim);
            }
            m.rounds.push_back(std::move(trees));
        }
        if (m.rounds.size() != m.hyper.rounds) throw FormatError("round count does not match the hyperparameters");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed boosted student: ") + e.what());
    }
}

}  // namespace qplan
