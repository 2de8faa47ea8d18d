#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "qplan/cost_model.hpp"
#include "qplan/error.hpp"
#include "qplan/harness.hpp"
#include "qplan/rng.hpp"
#include "support.hpp"

using namespace qplan;

namespace {

// y = 3 x0 + x1^2 + 5 + small noise; the other features are irrelevant.
struct Synthetic {
    Matrix x{kFeatureDim, {}};
    std::vector<double> y;
};

Synthetic synthetic(std::size_t n, std::uint64_t seed) {
    Synthetic d;
    rng::Stream rs(seed);
    for (std::size_t i = 0; i < n; ++i) {
        FeatureVector row{};
        for (auto& v : row) v = rs.uniform(-1.0, 1.0);
        d.x.push_row(row);
        d.y.push_back(3.0 * row[0] + row[1] * row[1] + 0.01 * rs.uniform(-1.0, 1.0) + 5.0);
    }
    return d;
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), 0);
    return r;
}

double mse(const ForestModel& m, const Matrix& x, const std::vector<double>& y) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::pow(predict(m, x.row(i)) - y[i], 2);
    return s / static_cast<double>(y.size());
}

}  // namespace

TEST_SUITE("features") {
    TEST_CASE("an empty single table") {
        const auto s = summarize_schema({{"e", 0, {{"k", 0}}}});
        const QueryIR ir = parse_sql("SELECT x.k FROM e x", s);
        const FeatureVector fv = featurize(ir, PlanConfig{}, s, {}, Constraints{1.0, 1.0});
        const FeatureVector expected{0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0};
        CHECK(fv == expected);
    }

    TEST_CASE("plan flags, complexity, sizes and resources") {
        const auto s = testing::chain_schema();
        const QueryIR ir = parse_sql("SELECT t.y FROM a t JOIN b u ON t.id = u.aid WHERE t.x > 2 AND u.z = 1", s);
        const FeatureVector fv = featurize(ir, PlanConfig::from_arm(5), s, {250.0, 0.3}, Constraints{1000.0, 9.0});
        CHECK(fv[0] == 1);
        CHECK(fv[1] == 0);
        CHECK(fv[2] == 1);
        CHECK(fv[3] + fv[4] + fv[5] == 0);
        CHECK(fv[6] == 2);
        CHECK(fv[7] == 1);
        CHECK(fv[8] == 2);
        CHECK(fv[9] == doctest::Approx(std::log10(1.0 + 1100.0)));
        CHECK(fv[10] == doctest::Approx(std::log10(1.0 + 1000.0)));
        CHECK(fv[11] == doctest::Approx(0.25));
        CHECK(fv[12] == doctest::Approx(0.3));
    }

    TEST_CASE("predicate order does not matter") {
        const auto s = testing::chain_schema();
        const QueryIR a = parse_sql("SELECT t.y FROM a t WHERE t.x > 2 AND t.y = 1", s);
        const QueryIR b = parse_sql("SELECT t.y FROM a t WHERE t.y = 1 AND t.x > 2", s);
        for (int arm : {0, 1, 63}) {
            CHECK(featurize(a, PlanConfig::from_arm(arm), s, {}, {1, 1}) ==
                  featurize(b, PlanConfig::from_arm(arm), s, {}, {1, 1}));
        }
    }
}

TEST_SUITE("regression tree") {
    TEST_CASE("a constant target gives a single leaf") {
        const auto d = synthetic(50, 1);
        const std::vector<double> y(50, 4.25);
        const auto rows = all_rows(50);
        const auto t = fit_tree(d.x, y, rows, TreeParams{});
        CHECK(t.nodes().size() == 1);
        CHECK(t.depth() == 0);
        CHECK(t.predict(d.x.row(3)) == doctest::Approx(4.25));
    }

    TEST_CASE("a step function splits once at the step") {
        Matrix x{1, {}};
        std::vector<double> y;
        for (int i = 0; i < 20; ++i) {
            const double v = i;
            x.push_row(std::span(&v, 1));
            y.push_back(i < 8 ? 1.0 : 9.0);
        }
        const auto rows = all_rows(20);
        const auto t = fit_tree(x, y, rows, TreeParams{});
        REQUIRE(t.nodes().size() == 3);
        CHECK(t.nodes()[0].feature == 0);
        CHECK(t.nodes()[0].threshold >= 7.0);
        CHECK(t.nodes()[0].threshold < 8.0);
        const double lo = 3.0, hi = 15.0;
        CHECK(t.predict(std::span(&lo, 1)) == doctest::Approx(1.0));
        CHECK(t.predict(std::span(&hi, 1)) == doctest::Approx(9.0));
    }

    TEST_CASE("depth and leaf size limits hold") {
        const auto d = synthetic(300, 2);
        const auto rows = all_rows(300);
        TreeParams p;
        p.max_depth = 3;
        p.min_samples_leaf = 20;
        const auto t = fit_tree(d.x, d.y, rows, p);
        CHECK(t.depth() <= 3);
        for (const auto& n : t.nodes()) {
            if (n.feature < 0) CHECK(n.samples >= 20);
        }
    }

    TEST_CASE("training error is no worse than the mean predictor") {
        const auto d = synthetic(200, 3);
        const auto rows = all_rows(200);
        const auto t = fit_tree(d.x, d.y, rows, TreeParams{});
        const double mean = std::accumulate(d.y.begin(), d.y.end(), 0.0) / 200.0;
        double tree_mae = 0, mean_mae = 0;
        for (std::size_t i = 0; i < 200; ++i) {
            tree_mae += std::abs(t.predict(d.x.row(i)) - d.y[i]);
            mean_mae += std::abs(mean - d.y[i]);
        }
        CHECK(tree_mae <= mean_mae);
    }
}

TEST_SUITE("forest") {
    TEST_CASE("fits a smooth function") {
        const auto train = synthetic(600, 4);
        const auto test = synthetic(200, 5);
        const ForestModel m = train_forest(train.x, train.y, ForestParams{}, 7);
        CHECK(m.trees.size() == 50);
        CHECK(m.dim == kFeatureDim);
        const auto e = evaluate_model(m, test.x, test.y);
        REQUIRE(e.r_squared.has_value());
        CHECK(*e.r_squared > 0.9);
        CHECK(e.samples == 200);
    }

    TEST_CASE("a forest averages its trees") {
        const RegressionTree leaf_a({TreeNode{-1, 0, -1, -1, 3.0, 1}});
        const RegressionTree leaf_b({TreeNode{-1, 0, -1, -1, 8.0, 1}});
        ForestModel m;
        m.trees = {leaf_a};
        const FeatureVector x{};
        CHECK(predict(m, x) == 3.0);
        m.trees = {leaf_a, leaf_b};
        CHECK(predict(m, x) == doctest::Approx(5.5));
        const auto s = predict_spread(m, x);
        CHECK(s.min == 3.0);
        CHECK(s.max == 8.0);
        m.trees.clear();
        CHECK(predict(m, x) == 0.0);
    }

    TEST_CASE("forest within 5% of its best tree on the seeded workload") {
        WorkloadProfile profile;
        const Workload w = generate_workload(profile, 42);
        const auto dir = testing::scratch_dir("forest-traces");
        RunOptions opts;
        SimulatorAdapter sim(w.schema);
        const auto p1 = run_phase1(w, dir);
        const auto p2 = run_phase2(w, p1, sim, opts, dir);
        Matrix xtrain{kFeatureDim, {}}, xtest{kFeatureDim, {}};
        std::vector<double> ytrain, ytest;
        for (const auto& t : p2.traces) {
            std::size_t i = 0;
            while (w.queries[i].query_id != t.query_id) ++i;
            const auto fv = featurize(p1.irs[i], t.config, p1.schema, w.queries[i].resources, p2.constraints);
            const bool train = in_train_split(opts.seed, t.query_id, opts.train_fraction);
            (train ? xtrain : xtest).push_row(fv);
            (train ? ytrain : ytest).push_back(t.latency_ms);
        }
        REQUIRE(ytest.size() > 1000);
        const auto m = train_forest(xtrain, ytrain, ForestParams{}, rng::mix(opts.seed, rng::hash_string("forest")));
        double best_tree = 1e300;
        for (const auto& t : m.trees) {
            ForestModel single = m;
            single.trees = {t};
            best_tree = std::min(best_tree, mse(single, xtest, ytest));
        }
        CHECK(mse(m, xtest, ytest) <= 1.05 * best_tree);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("training is deterministic and seed dependent") {
        const auto d = synthetic(200, 6);
        const auto a = train_forest(d.x, d.y, ForestParams{}, 3);
        const auto b = train_forest(d.x, d.y, ForestParams{}, 3);
        const auto c = train_forest(d.x, d.y, ForestParams{}, 4);
        CHECK(a.trees == b.trees);
        CHECK(a.trees != c.trees);
    }

    TEST_CASE("row order does not matter once the resamples are fixed") {
        const auto d = synthetic(120, 8);
        ForestParams p;
        p.n_estimators = 10;
        p.max_features = 0;
        const auto boot = bootstrap_indices(120, p, 11);
        REQUIRE(boot.size() == 10);
        const auto a = train_forest(d.x, d.y, p, 11, boot);

        // Reverse the rows and remap the resamples accordingly.
        Matrix rx{d.x.cols, {}};
        std::vector<double> ry;
        for (std::size_t i = 120; i-- > 0;) {
            rx.push_row(d.x.row(i));
            ry.push_back(d.y[i]);
        }
        auto rboot = boot;
        for (auto& rows : rboot) {
            for (auto& r : rows) r = 119 - r;
        }
        const auto b = train_forest(rx, ry, p, 11, rboot);
        const auto probe = synthetic(30, 9);
        for (std::size_t i = 0; i < 30; ++i) {
            CHECK(predict(a, probe.x.row(i)) == doctest::Approx(predict(b, probe.x.row(i))).epsilon(1e-12));
        }
    }

    TEST_CASE("without bootstrap every tree sees every row") {
        ForestParams p;
        p.bootstrap = false;
        p.n_estimators = 3;
        for (const auto& rows : bootstrap_indices(40, p, 1)) CHECK(rows == all_rows(40));
    }

    TEST_CASE("too little data and bad shapes are rejected") {
        const auto d = synthetic(3, 1);
        CHECK_THROWS_AS(train_forest(d.x, d.y, ForestParams{}, 0), TrainingError);
        const auto ok = synthetic(40, 1);
        std::vector<double> short_y(ok.y.begin(), ok.y.end() - 1);
        CHECK_THROWS_AS(train_forest(ok.x, short_y, ForestParams{}, 0), DimensionMismatchError);
        const auto m = train_forest(ok.x, ok.y, ForestParams{}, 0);
        const std::vector<double> wrong(5, 0.0);
        CHECK_THROWS_AS(predict(m, wrong), DimensionMismatchError);
        CHECK_THROWS_AS(predict_spread(m, wrong), DimensionMismatchError);
    }

    TEST_CASE("predictions never go negative and spread brackets the mean") {
        auto d = synthetic(200, 12);
        for (auto& v : d.y) v -= 5.5;
        const auto m = train_forest(d.x, d.y, ForestParams{}, 2);
        for (std::size_t i = 0; i < 50; ++i) {
            const double p = predict(m, d.x.row(i));
            const auto s = predict_spread(m, d.x.row(i));
            CHECK(p >= 0.0);
            CHECK(s.min <= p + 1e-12);
            CHECK(p <= s.max + 1e-12);
        }
    }

    TEST_CASE("evaluation of a perfect and a constant target") {
        Matrix x{kFeatureDim, {}};
        std::vector<double> y;
        for (int i = 0; i < 10; ++i) {
            FeatureVector row{};
            row[0] = i < 5 ? 0.0 : 1.0;
            x.push_row(row);
            y.push_back(i < 5 ? 2.0 : 6.0);
        }
        ForestParams p;
        p.bootstrap = false;
        p.max_features = 0;
        p.min_samples_leaf = 1;
        const auto m = train_forest(x, y, p, 0);
        const auto e = evaluate_model(m, x, y);
        CHECK(e.mae == doctest::Approx(0.0));
        REQUIRE(e.r_squared.has_value());
        CHECK(*e.r_squared == doctest::Approx(1.0));

        const std::vector<double> flat(10, 2.0);
        const auto ef = evaluate_model(m, x, flat);
        CHECK_FALSE(ef.r_squared.has_value());
        CHECK(ef.mae == doctest::Approx(2.0));
        CHECK_THROWS_AS(evaluate_model(m, Matrix{kFeatureDim, {}}, {}), PreconditionError);
    }

    TEST_CASE("pinned prediction") {
        const auto d = synthetic(300, 21);
        const auto m = train_forest(d.x, d.y, ForestParams{}, 42);
        const FeatureVector probe{0.25, -0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
        CHECK(predict(m, probe) == doctest::Approx(6.123577028953056).epsilon(1e-12));
    }

    TEST_CASE("json round trip preserves predictions") {
        const auto d = synthetic(150, 13);
        const auto m = train_forest(d.x, d.y, ForestParams{}, 5);
        const std::string text = forest_to_json(m);
        const auto back = forest_from_json(text);
        CHECK(back.trees == m.trees);
        CHECK(back.params == m.params);
        CHECK(back.seed == m.seed);
        CHECK(forest_to_json(back) == text);
        for (std::size_t i = 0; i < 20; ++i) CHECK(predict(back, d.x.row(i)) == predict(m, d.x.row(i)));
    }

    TEST_CASE("json with another layout or garbage is refused") {
        const auto d = synthetic(40, 14);
        auto m = train_forest(d.x, d.y, ForestParams{}, 5);
        std::string text = forest_to_json(m);
        const auto pos = text.find(kFeatureLayout);
        REQUIRE(pos != std::string::npos);
        std::string other = text;
        other.replace(pos, kFeatureLayout.size(), "phi99-v9");
        CHECK_THROWS_AS(forest_from_json(other), FormatError);
        CHECK_THROWS_AS(forest_from_json("{}"), FormatError);
        CHECK_THROWS_AS(forest_from_json("not json"), FormatError);
    }

    TEST_CASE("cross-validation picks a depth from the candidates") {
        const auto d = synthetic(200, 15);
        ForestParams p;
        p.n_estimators = 10;
        const std::vector<int> depths{1, 4, 8};
        const auto cv = cross_validate_depth(d.x, d.y, p, depths, 5, 3);
        CHECK(std::find(depths.begin(), depths.end(), cv.chosen_depth) != depths.end());
        CHECK(cv.chosen_depth > 1);
        REQUIRE(cv.mae_by_depth.size() == 3);
        for (const auto& [depth, mae] : cv.mae_by_depth) {
            if (depth == cv.chosen_depth) {
                for (const auto& other : cv.mae_by_depth) CHECK(mae <= other.second);
            }
        }
        CHECK_THROWS_AS(cross_validate_depth(d.x, d.y, p, {}, 5, 3), PreconditionError);
        CHECK_THROWS_AS(cross_validate_depth(d.x, d.y, p, depths, 1, 3), PreconditionError);
    }
}
