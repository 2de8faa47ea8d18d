#include <cmath>
#include <numeric>

#include "doctest.h"
#include "qplan/error.hpp"
#include "qplan/rng.hpp"
#include "qplan/student.hpp"
#include "support.hpp"

using namespace qplan;

namespace {

std::vector<double> padded(std::initializer_list<double> head) {
    std::vector<double> f(head);
    f.resize(kStudentDim, 0.0);
    return f;
}

// Label 3 when x0 < 0, label 40 otherwise.
DistillationSet separable(std::size_t n, std::uint64_t seed) {
    DistillationSet s;
    rng::Stream rs(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double x0 = rs.uniform(-1.0, 1.0);
        const double x1 = rs.uniform(-1.0, 1.0);
        const double gap = x0 < 0 ? -0.2 : 0.2;
        s.examples.push_back({"q" + std::to_string(i), padded({x0 + gap, x1}), x0 < 0 ? 3 : 40});
    }
    return s;
}

// Four clusters labelled by the XOR of the coordinate signs.
DistillationSet xor_set() {
    DistillationSet s;
    rng::Stream rs(4);
    for (int i = 0; i < 80; ++i) {
        const double a = (i % 2 ? 1.0 : -1.0) + rs.uniform(-0.2, 0.2);
        const double b = (i / 2 % 2 ? 1.0 : -1.0) + rs.uniform(-0.2, 0.2);
        s.examples.push_back({"x" + std::to_string(i), padded({a, b}), (a > 0) != (b > 0) ? 9 : 2});
    }
    return s;
}

DistillationSet three_class_toy() {
    DistillationSet s;
    s.dim = 4;
    s.classes = 3;
    rng::Stream rs(12);
    for (int i = 0; i < 12; ++i) {
        std::vector<double> f(4);
        for (auto& v : f) v = rs.uniform(-2.0, 2.0);
        s.examples.push_back({"t" + std::to_string(i), f, i % 3});
    }
    return s;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_SUITE("distillation set") {
    TEST_CASE("student features drop the plan flags") {
        FeatureVector fv{};
        for (std::size_t i = 0; i < kFeatureDim; ++i) fv[i] = static_cast<double>(i);
        CHECK(student_features(fv) == std::vector<double>{6, 7, 8, 9, 10, 11, 12});
    }

    TEST_CASE("labels come from the search results") {
        std::vector<FeaturizedQuery> qs{{"a", padded({1})}, {"b", padded({2})}};
        std::map<std::string, SearchResult, std::less<>> results;
        results["a"].chosen_arm = 17;
        results["b"].chosen_arm = 32;
        const auto set = build_distillation_set(qs, results);
        REQUIRE(set.examples.size() == 2);
        CHECK(set.examples[0].label == 17);
        CHECK(set.examples[1].label == 32);
        CHECK(set.distinct_labels() == 2);
        results.erase("b");
        CHECK_THROWS_AS(build_distillation_set(qs, results), PreconditionError);
    }

    TEST_CASE("ragged features and bad labels are rejected") {
        DistillationSet s = separable(4, 1);
        s.examples[1].features.pop_back();
        CHECK_THROWS_AS(s.check(), DimensionMismatchError);
        s = separable(4, 1);
        s.examples[0].label = 64;
        CHECK_THROWS_AS(s.check(), PreconditionError);
        s.examples[0].label = -1;
        CHECK_THROWS_AS(s.check(), PreconditionError);
    }
}

TEST_SUITE("softmax") {
    TEST_CASE("probabilities sum to one and the argmax breaks ties low") {
        const std::vector<double> scores{1.0, 3.0, 3.0, -2.0};
        const auto p = softmax_prediction(scores);
        CHECK(p.arm == 1);
        CHECK(sum(p.probabilities) == doctest::Approx(1.0));
        CHECK(p.probabilities[1] == doctest::Approx(p.probabilities[2]));
    }

    TEST_CASE("huge scores stay finite") {
        const std::vector<double> scores{1000.0, 999.0, -1000.0};
        const auto p = softmax_prediction(scores);
        for (double v : p.probabilities) CHECK(std::isfinite(v));
        CHECK(sum(p.probabilities) == doctest::Approx(1.0));
        CHECK(p.probabilities[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
        const std::vector<double> flat(64, -1e6);
        const auto q = softmax_prediction(flat);
        CHECK(q.probabilities[63] == doctest::Approx(1.0 / 64));
    }
}

TEST_SUITE("linear student") {
    TEST_CASE("separates two classes") {
        const auto train = separable(100, 2);
        const auto test = separable(50, 3);
        const auto m = train_linear(train);
        CHECK(accuracy(m, train) == 1.0);
        CHECK(accuracy(m, test) == 1.0);
        CHECK(m.loss_history.size() == 501);
        CHECK(m.loss_history.back() < m.loss_history.front());
    }

    TEST_CASE("zero epochs predicts uniformly") {
        LinearHyper h;
        h.epochs = 0;
        const auto m = train_linear(separable(20, 2), h);
        const auto p = student_predict(m, padded({0.3, 0.1}));
        for (double v : p.probabilities) CHECK(v == doctest::Approx(1.0 / 64));
        CHECK(p.arm == 0);
        CHECK(m.loss_history.size() == 1);
        CHECK(m.loss_history[0] == doctest::Approx(std::log(64.0)));
    }

    TEST_CASE("one class is not enough") {
        DistillationSet s = separable(10, 1);
        for (auto& e : s.examples) e.label = 5;
        CHECK_THROWS_AS(train_linear(s), TrainingError);
        CHECK_THROWS_AS(train_boosted(s), TrainingError);
        CHECK_THROWS_AS(train_linear(DistillationSet{}), TrainingError);
    }

    TEST_CASE("rescaling a feature changes nothing") {
        const auto base = separable(60, 5);
        auto scaled = base;
        for (auto& e : scaled.examples) {
            e.features[0] *= 1000.0;
            e.features[1] = e.features[1] * 0.001 + 7.0;
        }
        LinearHyper h;
        h.epochs = 50;
        const auto a = train_linear(base, h);
        const auto b = train_linear(scaled, h);
        for (std::size_t i = 0; i < base.examples.size(); ++i) {
            const auto pa = student_predict(a, base.examples[i].features);
            const auto pb = student_predict(b, scaled.examples[i].features);
            CHECK(pa.arm == pb.arm);
            for (std::size_t k = 0; k < pa.probabilities.size(); ++k) {
                CHECK(pa.probabilities[k] == doctest::Approx(pb.probabilities[k]).epsilon(1e-9));
            }
        }
    }

    TEST_CASE("analytic gradient matches finite differences") {
        const auto set = three_class_toy();
        LinearStudent m;
        m.dim = set.dim;
        m.classes = set.classes;
        m.mean.assign(m.dim, 0.0);
        m.scale.assign(m.dim, 1.0);
        rng::Stream rs(99);
        for (std::size_t i = 0; i < m.classes * m.dim; ++i) m.weights.push_back(rs.uniform(-0.5, 0.5));
        for (std::size_t k = 0; k < m.classes; ++k) m.bias.push_back(rs.uniform(-0.5, 0.5));
        const double l2 = 0.01;
        const auto g = linear_loss_gradient(m, set, l2);
        const double h = 1e-6;
        const auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); };
        for (std::size_t i = 0; i < m.weights.size(); ++i) {
            auto up = m, down = m;
            up.weights[i] += h;
            down.weights[i] -= h;
            const double fd = (linear_loss_gradient(up, set, l2).loss - linear_loss_gradient(down, set, l2).loss) / (2 * h);
            CHECK(rel(fd, g.weights[i]) < 1e-5);
        }
        for (std::size_t k = 0; k < m.classes; ++k) {
            auto up = m, down = m;
            up.bias[k] += h;
            down.bias[k] -= h;
            const double fd = (linear_loss_gradient(up, set, l2).loss - linear_loss_gradient(down, set, l2).loss) / (2 * h);
            CHECK(rel(fd, g.bias[k]) < 1e-5);
        }
    }

    TEST_CASE("json round trip and refusals") {
        const auto m = train_linear(separable(40, 6));
        const std::string text = linear_to_json(m);
        const auto back = linear_from_json(text);
        CHECK(back.weights == m.weights);
        CHECK(back.bias == m.bias);
        CHECK(back.mean == m.mean);
        CHECK(back.scale == m.scale);
        CHECK(linear_to_json(back) == text);
        const auto probe = padded({0.4, -0.9});
        CHECK(student_predict(back, probe).probabilities == student_predict(m, probe).probabilities);
        std::string other = text;
        other.replace(other.find(kStudentLayout), kStudentLayout.size(), "phi13-v1/query9");
        CHECK_THROWS_AS(linear_from_json(other), FormatError);
        CHECK_THROWS_AS(linear_from_json("[]"), FormatError);
        CHECK_THROWS_AS(boosted_from_json(text), FormatError);
        CHECK_THROWS_AS(student_predict(m, std::vector<double>(3, 0.0)), DimensionMismatchError);
    }
}

TEST_SUITE("boosted student") {
    TEST_CASE("learns xor") {
        const auto set = xor_set();
        const auto m = train_boosted(set);
        CHECK(accuracy(m, set) == 1.0);
        const auto lin = train_linear(set);
        CHECK(accuracy(lin, set) < 1.0);
    }

    TEST_CASE("training loss never rises") {
        const auto m = train_boosted(xor_set());
        REQUIRE(m.loss_history.size() == 51);
        for (std::size_t i = 1; i < m.loss_history.size(); ++i) {
            CHECK(m.loss_history[i] <= m.loss_history[i - 1] + 1e-12);
        }
        CHECK(cross_entropy(m, xor_set()) == doctest::Approx(m.loss_history.back()));
    }

    TEST_CASE("classes never seen are never predicted") {
        const auto set = separable(50, 7);
        const auto m = train_boosted(set);
        CHECK(m.present[3]);
        CHECK(m.present[40]);
        CHECK_FALSE(m.present[0]);
        rng::Stream rs(8);
        for (int i = 0; i < 100; ++i) {
            const auto p = student_predict(m, padded({rs.uniform(-5, 5), rs.uniform(-5, 5)}));
            CHECK((p.arm == 3 || p.arm == 40));
            CHECK(sum(p.probabilities) == doctest::Approx(1.0));
            CHECK(p.probabilities[0] < 1e-6);
        }
        for (const auto& round : m.rounds) CHECK(round[0].nodes().size() <= 1);
    }

    TEST_CASE("hyperparameters are checked") {
        BoostedHyper h;
        h.rounds = 0;
        CHECK_THROWS_AS(train_boosted(xor_set(), h), PreconditionError);
    }

    TEST_CASE("training is deterministic") {
        const auto a = train_boosted(xor_set(), {}, 3);
        const auto b = train_boosted(xor_set(), {}, 3);
        CHECK(boosted_to_json(a) == boosted_to_json(b));
    }

    TEST_CASE("json round trip and refusals") {
        const auto m = train_boosted(xor_set());
        const std::string text = boosted_to_json(m);
        const auto back = boosted_from_json(text);
        CHECK(boosted_to_json(back) == text);
        CHECK(back.present == m.present);
        for (const auto& e : xor_set().examples) {
            CHECK(student_predict(back, e.features).probabilities == student_predict(m, e.features).probabilities);
        }
        CHECK_THROWS_AS(linear_from_json(text), FormatError);
        CHECK_THROWS_AS(boosted_from_json("{\"format\":1}"), FormatError);
        CHECK_THROWS_AS(student_predict(m, std::vector<double>(8, 0.0)), DimensionMismatchError);
    }
}

TEST_SUITE("speedup") {
    TEST_CASE("ratio of medians") {
        const std::vector<double> full{10.0, 30.0, 20.0};
        const std::vector<double> fast{0.5, 0.1, 0.2};
        CHECK(measure_speedup(full, fast) == doctest::Approx(100.0));
        CHECK_THROWS_AS(measure_speedup({}, fast), PreconditionError);
        const std::vector<double> zero{0.0, 0.0, 1.0};
        CHECK_THROWS_AS(measure_speedup(full, zero), PreconditionError);
    }
}
