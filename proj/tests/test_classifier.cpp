#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "soh/classifier.hpp"
#include "soh/rng.hpp"

using namespace soh;
using namespace soh::eol;

TEST_CASE("balanced accuracy arithmetic") {
    CHECK(balanced_accuracy(10, 0, 10, 0) == 1.0);
    CHECK(balanced_accuracy(5, 5, 7, 7) == 0.5);
    CHECK(balanced_accuracy(9, 1, 4, 6) == doctest::Approx(0.65).epsilon(1e-15));
    CHECK_THROWS_AS(balanced_accuracy(0, 0, 5, 5), DomainError);
    CHECK_THROWS_AS(balanced_accuracy(5, 5, 0, 0), DomainError);
    // A constant classifier scores exactly 0.5 when both classes are present.
    CHECK(balanced_accuracy(8, 0, 0, 12) == 0.5);
    CHECK(balanced_accuracy(0, 8, 12, 0) == 0.5);
}

TEST_CASE("well-separated clusters classify confidently") {
    std::mt19937_64 g(1);
    const int n = 40;
    Eigen::MatrixXd x(n, 1);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        const bool pos = i % 2 == 0;
        x(i, 0) = (pos ? 3.0 : -3.0) + 0.3 * rng::normal(g);
        y[std::size_t(i)] = pos ? 1 : -1;
    }
    ClassifierConfig cfg;
    cfg.seed = 4;
    // Separable data drives the marginal-likelihood optimum of the latent
    // magnitude toward the top of the uniform hyperprior's support, washing
    // out the averaged predictive; a modest support keeps it sharp.
    cfg.hp_upper = 5.0;
    auto model = LaplaceGpClassifier::train(x, y, cfg);
    for (int i = 0; i < n; ++i) {
        const double p = model.predict_probability(x.row(i).transpose());
        if (y[std::size_t(i)] == 1)
            CHECK(p >= 0.9);
        else
            CHECK(p <= 0.1);
    }
}

TEST_CASE("symmetric two-point training set gives probability one half at the midpoint") {
    Eigen::MatrixXd x(2, 1);
    x << -1.0, 1.0;
    std::vector<int> y = {-1, 1};
    ClassifierConfig cfg;
    auto model = LaplaceGpClassifier::train(x, y, cfg);
    Eigen::VectorXd mid(1);
    mid << 0.0;
    CHECK(model.predict_probability(mid) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("far queries revert to the prior probability") {
    std::mt19937_64 g(2);
    Eigen::MatrixXd x(20, 2);
    std::vector<int> y(20);
    for (int i = 0; i < 20; ++i) {
        x(i, 0) = rng::normal(g);
        x(i, 1) = rng::normal(g);
        y[std::size_t(i)] = (x(i, 0) > 0) ? 1 : -1;
    }
    ClassifierConfig cfg;
    auto model = LaplaceGpClassifier::train(x, y, cfg);
    Eigen::VectorXd far(2);
    far << 500.0, -500.0;
    CHECK(std::abs(model.predict_probability(far) - 0.5) < 0.05);
}

TEST_CASE("degenerate training sets and dimension mismatches are rejected") {
    Eigen::MatrixXd x(4, 1);
    x << 0, 1, 2, 3;
    std::vector<int> same = {1, 1, 1, 1};
    ClassifierConfig cfg;
    CHECK_THROWS_AS(LaplaceGpClassifier::train(x, same, cfg), DomainError);

    std::vector<int> y = {1, -1, 1, -1};
    auto model = LaplaceGpClassifier::train(x, y, cfg);
    Eigen::VectorXd wrong(2);
    wrong << 0, 0;
    CHECK_THROWS_AS(model.predict_probability(wrong), DomainError);
}

TEST_CASE("ARD shrinks the relevance of a pure-noise input") {
    int informative_wins = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 g(100 + seed);
        const int n = 60;
        Eigen::MatrixXd x(n, 2);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            x(i, 0) = rng::normal(g);
            x(i, 1) = rng::normal(g);  // pure noise
            y[std::size_t(i)] = x(i, 0) + 0.2 * rng::normal(g) > 0 ? 1 : -1;
        }
        ClassifierConfig cfg;
        cfg.seed = seed;
        auto model = LaplaceGpClassifier::train(x, y, cfg);
        const double inv0 = 1.0 / model.length_scales()[0];
        const double inv1 = 1.0 / model.length_scales()[1];
        if (inv0 > inv1) ++informative_wins;
    }
    CHECK(informative_wins >= 16);  // at least 80% of seeded runs
}

TEST_CASE("stratified folds keep the class ratio within one battery") {
    std::mt19937_64 g(5);
    std::vector<Label> labels;
    for (int i = 0; i < 97; ++i) labels.push_back(i % 5 < 2 ? Label::failed : Label::healthy);
    auto folds = stratified_folds(labels, 5, 42);
    std::vector<int> failed_per(5, 0), total_per(5, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++total_per[std::size_t(folds[i])];
        if (labels[i] == Label::failed) ++failed_per[std::size_t(folds[i])];
    }
    for (int f = 0; f < 5; ++f) {
        CHECK(std::abs(failed_per[std::size_t(f)] - 39.0 / 5.0) <= 1.0);
        CHECK(total_per[std::size_t(f)] >= 19);
    }
    CHECK_THROWS_AS(stratified_folds(std::vector<Label>(3, Label::failed), 5, 1), DomainError);
}

namespace {

CvInputs synthetic_cv_inputs(int n, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    CvInputs in;
    in.horizons_days = {0, 56};
    for (int i = 0; i < n; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "b%03d", i);
        in.battery_ids.push_back(buf);
        const bool failed = i % 2 == 0;
        in.labels.push_back(failed ? Label::failed : Label::healthy);
        const double sig = failed ? 1.0 : -1.0;
        std::vector<double> r0, drdt, bench;
        std::vector<std::array<double, features::kNumFeatures>> stress;
        for (std::size_t h = 0; h < 2; ++h) {
            r0.push_back(0.4 + 0.2 * sig + 0.05 * rng::normal(g));
            drdt.push_back(0.01 * sig + 0.005 * rng::normal(g));
            bench.push_back(0.4 + 0.1 * sig + 0.1 * rng::normal(g));
            std::array<double, features::kNumFeatures> s{};
            for (auto& v : s) v = 0.3 * sig + rng::normal(g);
            stress.push_back(s);
        }
        in.r0.push_back(r0);
        in.drdt.push_back(drdt);
        in.bench.push_back(bench);
        in.stress.push_back(stress);
    }
    return in;
}

}  // namespace

TEST_CASE("nested cross validation: case accounting and determinism") {
    auto inputs = synthetic_cv_inputs(40, 3);
    CvConfig cfg;
    cfg.folds = 5;
    cfg.subset_fractions = {0.4, 0.6};
    cfg.subset_repeats = 3;
    cfg.seed = 11;
    cfg.classifier.opt_max_iters = 15;
    cfg.classifier.restarts = 1;

    auto rep = run_nested_cv(inputs, cfg);
    // 4 scenarios x 5 folds x (2*3+1) subsets x 2 horizons
    CHECK(rep.cases.size() == std::size_t(4 * 5 * 7 * 2));
    CHECK(rep.aggregates.size() == 8);
    for (const auto& a : rep.aggregates) {
        CHECK(a.n_cases == std::size_t(5 * 7));
        CHECK(a.mean >= 0.0);
        CHECK(a.mean <= 1.0);
    }
    // Confusion totals reconcile with the subset sizes.
    for (const auto& c : rep.cases) CHECK(c.tp + c.fn + c.tn + c.fp >= 4);
    // Relevance rows exist for every scenario input.
    CHECK(rep.relevance.size() == std::size_t(2 + 1 + 8 + 6));
    for (const auto& r : rep.relevance) CHECK(r.mean_inv_length >= 0.0);

    auto rep2 = run_nested_cv(inputs, cfg);
    REQUIRE(rep2.cases.size() == rep.cases.size());
    for (std::size_t i = 0; i < rep.cases.size(); ++i) {
        CHECK(rep.cases[i].balanced_accuracy == rep2.cases[i].balanced_accuracy);
        CHECK(rep.cases[i].tp == rep2.cases[i].tp);
    }

    // Separable inputs should classify well at both horizons.
    for (const auto& a : rep.aggregates)
        if (a.scenario == int(Scenario::combined)) CHECK(a.mean > 0.8);
}

TEST_CASE("report JSON round-trips") {
    auto inputs = synthetic_cv_inputs(30, 4);
    CvConfig cfg;
    cfg.folds = 3;
    cfg.subset_fractions = {0.5};
    cfg.subset_repeats = 2;
    cfg.classifier.opt_max_iters = 10;
    cfg.classifier.restarts = 1;
    auto rep = run_nested_cv(inputs, cfg);
    rep.write_json("/tmp/soh_eval.json");
    auto back = EvalReport::from_json_file("/tmp/soh_eval.json");
    CHECK(back.cases.size() == rep.cases.size());
    CHECK(back.aggregates.size() == rep.aggregates.size());
    CHECK(back.relevance.size() == rep.relevance.size());
    CHECK(back.cases[5].balanced_accuracy == rep.cases[5].balanced_accuracy);
}
