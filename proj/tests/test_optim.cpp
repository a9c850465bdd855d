#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "soh/optim.hpp"

using namespace soh;

TEST_CASE("box-constrained quadratic lands on the projected optimum") {
    // min (x-3)^2 + (y+2)^2 + (z-0.5)^2 with x <= 1
    auto f = [](const Eigen::VectorXd& v) {
        return (v[0] - 3) * (v[0] - 3) + (v[1] + 2) * (v[1] + 2) + (v[2] - 0.5) * (v[2] - 0.5);
    };
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(3, -10);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(3, 10);
    hi[0] = 1.0;
    auto res = optim::minimize_box(f, x0, lo, hi);
    CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(res.x[1] == doctest::Approx(-2.0).epsilon(1e-6));
    CHECK(res.x[2] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("rosenbrock converges from the classic start") {
    auto f = [](const Eigen::VectorXd& v) {
        const double a = 1 - v[0];
        const double b = v[1] - v[0] * v[0];
        return a * a + 100 * b * b;
    };
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(2, -5);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(2, 5);
    optim::Options opts;
    opts.max_iters = 500;
    auto res = optim::minimize_box(f, x0, lo, hi, opts);
    CHECK(res.f < 1e-6);
    CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-2));
    // descent contract
    CHECK(res.f <= f(x0));
}

TEST_CASE("fd_gradient clamps at the box edge") {
    auto f = [](const Eigen::VectorXd& v) { return v[0] * v[0]; };
    Eigen::VectorXd x(1), lo(1), hi(1);
    x << 1.0;
    lo << -2.0;
    hi << 1.0;  // x sits on the upper bound
    auto g = optim::fd_gradient(f, x, lo, hi, 1e-6);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("golden section scalar minimization") {
    auto f = [](double x) { return (x - 2.0) * (x - 2.0) + 1.5; };
    CHECK(optim::minimize_scalar(f, 0.0, 5.0, 1e-10) == doctest::Approx(2.0).epsilon(1e-6));
}
