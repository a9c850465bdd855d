#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "soh/population.hpp"
#include "soh/rng.hpp"

using namespace soh;
using namespace soh::population;

namespace {

PopulationGP manual_gp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& var, double sigma_f, double sigma_n) {
    PopulationGP gp;
    gp.battery_ids.assign(std::size_t(x.rows()), "b");
    gp.X = x;
    gp.y = y;
    gp.target_var = var;
    gp.sigma_f = sigma_f;
    gp.sigma_n = sigma_n;
    gp.l_i = gp.l_t = gp.l_c = 1.0;
    gp.factorize();
    return gp;
}

ssgp::HealthModel minimal_model() {
    ssgp::HealthModel hm;
    hm.battery_id = "b1";
    hm.hp.sigma_f0 = 0.2;
    hm.phi_mean = 0.31;
    hm.phi_var = 0.004;
    hm.min_i = hm.min_t = hm.min_c = -2.0;
    hm.max_i = hm.max_t = hm.max_c = 2.0;
    ssgp::TrajectoryPoint p0;
    p0.t_norm = 0.0;
    p0.age_seconds = 0.0;
    p0.mean_r = 0.0;
    p0.var_r = 0.0;
    ssgp::TrajectoryPoint p1;
    p1.t_norm = 1.0;
    p1.age_seconds = kTimeScaleSeconds;
    p1.mean_r = 0.08;
    p1.mean_v = 0.05;
    p1.var_r = 1e-4;
    p1.var_v = 4e-4;
    p1.cov_rv = 5e-5;
    p1.cov_r_phi = 2e-5;
    p1.cov_v_phi = 1e-5;
    hm.track = {p0, p1};
    return hm;
}

ssgp::BenchmarkModel minimal_benchmark() {
    ssgp::BenchmarkModel bm;
    bm.battery_id = "b1";
    bm.q = 0.01;
    ssgp::BenchmarkTrackPoint p;
    p.t_norm = 1.0;
    p.age_seconds = kTimeScaleSeconds;
    p.mean = 0.4;
    p.var = 1e-3;
    bm.track = {p};
    bm.last_t_norm = 1.0;
    bm.last_mean = 0.4;
    bm.last_var = 1e-3;
    return bm;
}

}  // namespace

TEST_CASE("population GP posterior matches a hand-evaluated Gaussian conditional") {
    Eigen::MatrixXd x(5, 3);
    x << 0.0, 0.0, 0.0, 1.0, -0.5, 0.2, -1.2, 0.8, 0.1, 0.4, 0.4, -0.9, 2.0, 1.0, 1.0;
    Eigen::VectorXd y(5);
    y << 0.30, 0.35, 0.28, 0.41, 0.33;
    Eigen::VectorXd var(5);
    var << 1e-4, 2e-4, 5e-5, 1e-4, 3e-4;
    auto gp = manual_gp(x, y, var, 0.25, 0.05);

    // Independent dense evaluation of the printed posterior equations.
    const double lengths[3] = {1.0, 1.0, 1.0};
    Eigen::MatrixXd k(5, 5);
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
            const double pa[3] = {x(a, 0), x(a, 1), x(a, 2)};
            const double pb[3] = {x(b, 0), x(b, 1), x(b, 2)};
            k(a, b) = ssgp::se_kernel(pa, pb, 0.25, lengths);
        }
    Eigen::MatrixXd c = k;
    c.diagonal().array() += 0.05 * 0.05 + 1e-8;
    c.diagonal() += var;
    const Eigen::VectorXd alpha = c.llt().solve(y);

    std::mt19937_64 g(2);
    for (int rep = 0; rep < 20; ++rep) {
        const double q[3] = {rng::normal(g), rng::normal(g), rng::normal(g)};
        Eigen::VectorXd ks(5);
        for (int a = 0; a < 5; ++a) {
            const double pa[3] = {x(a, 0), x(a, 1), x(a, 2)};
            ks[a] = ssgp::se_kernel(q, pa, 0.25, lengths);
        }
        const double want_mean = ks.dot(alpha);
        const double want_var = 0.25 * 0.25 - ks.dot(c.llt().solve(ks));
        auto got = gp.predict(q[0], q[1], q[2]);
        CHECK(got.mean == doctest::Approx(want_mean).epsilon(1e-9));
        CHECK(got.var == doctest::Approx(want_var).scale(1.0).epsilon(1e-9));
    }
}

TEST_CASE("population GP interpolates tight training points and reverts to the prior") {
    Eigen::MatrixXd x(3, 3);
    x << 0, 0, 0, 1, 1, 1, -1, 0.5, -0.5;
    Eigen::VectorXd y(3);
    y << 0.3, 0.4, 0.26;
    Eigen::VectorXd var = Eigen::VectorXd::Constant(3, 1e-10);
    auto gp = manual_gp(x, y, var, 0.3, 1e-4);

    auto inter = gp.predict(0, 0, 0);
    CHECK(inter.mean == doctest::Approx(0.3).epsilon(1e-4));
    CHECK(inter.var < 1e-6);

    auto far = gp.predict(30, 30, 30);
    CHECK(std::abs(far.mean) < 1e-8);
    CHECK(far.var == doctest::Approx(0.09).epsilon(1e-8));
}

TEST_CASE("MAP fit of the population GP recovers a smooth surface") {
    std::mt19937_64 g(7);
    const int n = 40;
    Eigen::MatrixXd x(n, 3);
    Eigen::VectorXd y(n), var(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = rng::normal(g);
        x(i, 1) = rng::normal(g);
        x(i, 2) = rng::normal(g);
        // Monotone-decreasing dependence on the temperature coordinate.
        y[i] = 0.35 - 0.06 * x(i, 1) + 0.01 * rng::normal(g);
        var[i] = 1e-4;
    }
    PopulationConfig cfg;
    auto gp = fit_population_gp(std::vector<std::string>(n, "b"), x, y, var, cfg);

    soc::NormalizationMoments m;
    m.mean_t = 25;
    m.std_t = 4;
    m.p5_t = 25 - 6;
    m.p95_t = 25 + 6;
    m.mean_i = 2;
    m.std_i = 1;
    m.p5_i = 1;
    m.p95_i = 3;
    m.mean_c = 4;
    m.std_c = 0.5;
    m.p5_c = 3.4;
    m.p95_c = 4.6;
    auto slices = population_slices(gp, m, 21);
    REQUIRE(slices.size() == 3);
    const auto& temp = slices[0];
    CHECK(temp.input_name == "temperature");
    CHECK(temp.mean.front() > temp.mean.back());  // decreasing in temperature
    // All slices share the pinned population-mean point at their midpoints.
    const int mid = 10;
    CHECK(slices[0].mean[mid] == doctest::Approx(slices[1].mean[mid]).epsilon(1e-9));
    CHECK(slices[1].mean[mid] == doctest::Approx(slices[2].mean[mid]).epsilon(1e-9));
    for (const auto& s : slices)
        for (std::size_t k = 0; k < s.grid.size(); ++k) {
            CHECK(s.lo[k] <= s.mean[k]);
            CHECK(s.hi[k] >= s.mean[k]);
        }
}

TEST_CASE("fit_population_gp requires at least two batteries") {
    Eigen::MatrixXd x(1, 3);
    x.setZero();
    Eigen::VectorXd y(1), var(1);
    y << 0.3;
    var << 1e-4;
    PopulationConfig cfg;
    CHECK_THROWS_AS(fit_population_gp({"b"}, x, y, var, cfg), DomainError);
}

TEST_CASE("calibrated trajectory: anchoring, affine extrapolation, cubic variance") {
    auto hm = minimal_model();
    auto bm = minimal_benchmark();
    const double end_age = kTimeScaleSeconds;  // series ends at the last knot
    std::vector<double> horizons = {0, 14, 28};
    auto tr = calibrate_trajectory(hm, bm, horizons, end_age);

    CHECK(!tr.range_warning);
    REQUIRE(tr.points.size() == 2);
    CHECK(tr.points[0].r0_mean == doctest::Approx(hm.phi_mean).epsilon(1e-12));
    CHECK(tr.points[0].r0_var == doctest::Approx(hm.phi_var).epsilon(1e-12));

    // Horizon 0 coincides with the endpoint.
    REQUIRE(tr.horizons.size() == 3);
    const auto& h0 = tr.horizons[0];
    CHECK(h0.r0_mean == doctest::Approx(tr.points[1].r0_mean).epsilon(1e-12));
    CHECK(h0.r0_var == doctest::Approx(tr.points[1].r0_var).epsilon(1e-12));
    CHECK(h0.bench_mean == doctest::Approx(0.4).epsilon(1e-12));

    // Beyond-end extrapolation (negative horizon = future).
    std::vector<double> future = {-7, -14, -28};
    auto trf = calibrate_trajectory(hm, bm, future, end_age);
    const auto& p = hm.track[1];
    const double q = hm.hp.sigma_f0 * hm.hp.sigma_f0;
    for (std::size_t k = 0; k < future.size(); ++k) {
        const double dt = -future[k] * 86400.0 / kTimeScaleSeconds;
        const auto& h = trf.horizons[k];
        CHECK(h.r0_mean ==
              doctest::Approx(p.mean_r + dt * p.mean_v + hm.phi_mean).epsilon(1e-12));
        const double var_r =
            p.var_r + 2 * dt * p.cov_rv + dt * dt * p.var_v + q * dt * dt * dt / 3.0;
        const double want_var =
            var_r + 2 * (p.cov_r_phi + dt * p.cov_v_phi) + hm.phi_var;
        CHECK(h.r0_var == doctest::Approx(want_var).epsilon(1e-12));
        CHECK(h.r0_var > tr.horizons[0].r0_var);  // strictly grows with dt
        CHECK(h.drdt_mean == p.mean_v);
        CHECK(h.drdt_var == doctest::Approx(p.var_v + q * dt).epsilon(1e-12));
        CHECK(h.bench_var == doctest::Approx(1e-3 + bm.q * dt).epsilon(1e-12));
    }

    // A target before the first knot is a domain error.
    std::vector<double> too_early = {800};
    CHECK_THROWS_AS(calibrate_trajectory(hm, bm, too_early, end_age), DomainError);
}

TEST_CASE("range warning triggers when the calibration point is far outside") {
    auto hm = minimal_model();
    auto bm = minimal_benchmark();
    hm.min_i = 3.5;
    hm.max_i = 6.0;
    auto tr = calibrate_trajectory(hm, bm, std::vector<double>{0}, kTimeScaleSeconds);
    CHECK(tr.range_warning);
    hm.min_i = 2.5;
    auto tr2 = calibrate_trajectory(hm, bm, std::vector<double>{0}, kTimeScaleSeconds);
    CHECK(!tr2.range_warning);
}

TEST_CASE("trajectory JSON round-trips") {
    auto tr = calibrate_trajectory(minimal_model(), minimal_benchmark(),
                                   std::vector<double>{0, 14}, kTimeScaleSeconds);
    tr.write_json("/tmp/soh_traj.json");
    auto back = HealthTrajectory::from_json_file("/tmp/soh_traj.json");
    CHECK(back.battery_id == tr.battery_id);
    REQUIRE(back.points.size() == tr.points.size());
    CHECK(back.points[1].r0_mean == tr.points[1].r0_mean);
    CHECK(back.horizons[1].bench_var == tr.horizons[1].bench_var);
}
