#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "soh/rng.hpp"
#include "soh/soc.hpp"

using namespace soh;
using namespace soh::soc;

namespace {

GassingParams no_gassing() {
    GassingParams p;
    p.i_gas0 = 0.0;
    p.v_elec = 1.0;
    return p;
}

// Independent monotone inverse: bisection over the forward voltage map.
double invert_by_bisection(const OcvCurve& ocv, double v) {
    double lo = ocv.c_min(), hi = ocv.c_max();
    for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        (ocv.voltage(mid) < v ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("OCV inverse: exact table hit, interior inversion, range error") {
    std::vector<double> c = {1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> v = {11.8, 12.0, 12.16, 12.30, 12.55};
    OcvCurve ocv(c, v);
    CHECK(ocv.concentration(12.30) == doctest::Approx(4.0).epsilon(1e-10));
    const double mid_v = 12.22;
    CHECK(ocv.concentration(mid_v) == doctest::Approx(invert_by_bisection(ocv, mid_v)).epsilon(1e-9));
    CHECK(ocv.voltage(ocv.concentration(mid_v)) == doctest::Approx(mid_v).epsilon(1e-10));
    CHECK_THROWS_AS(ocv.concentration(15.0), DomainError);
    // Round trip on table nodes.
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(ocv.concentration(v[i]) == doctest::Approx(c[i]).epsilon(1e-9));
}

TEST_CASE("OCV curve rejects non-increasing voltage") {
    std::vector<double> c = {1.0, 2.0, 3.0};
    std::vector<double> v = {12.0, 12.0, 12.1};
    CHECK_THROWS_AS(OcvCurve(c, v), DomainError);
}

TEST_CASE("coulomb counting: hand-checked single step") {
    auto ocv = OcvCurve::builtin_default();
    std::vector<double> cur = {1.0, 1.0};
    std::vector<double> vol = {12.3, 12.3};
    std::vector<double> tmp = {25.0, 25.0};
    InitConcentration init{3.0, 12.3, 1.0, 0};
    auto s = coulomb_count(cur, vol, tmp, 60.0, init, no_gassing(), ocv);
    CHECK(s.concentration[1] - s.concentration[0] == doctest::Approx(60.0 / 96485.0).epsilon(1e-12));
    CHECK(s.concentration[0] == 3.0);
}

TEST_CASE("gassing current equals i_gas0 at the reference conditions") {
    GassingParams p;  // defaults
    double t = p.t_0, v = p.v_0ref, out = 0;
    simd::ops().gassing_span(&t, &v, 1, p.coeffs(), &out);
    CHECK(out == p.i_gas0);
}

TEST_CASE("variance accumulates 1% of squared concentration steps") {
    auto ocv = OcvCurve::builtin_default();
    // One step of exactly 0.1 mol/L: I*dt/(F*V) = 0.1.
    GassingParams p = no_gassing();
    p.v_elec = 60.0 / (96485.0 * 0.1);
    std::vector<double> cur = {96485.0 * p.v_elec * 0.1 / 60.0, 1.0};
    cur[0] = 1.0;  // with v_elec chosen above, 1 A for 60 s gives dc = 0.1
    std::vector<double> vol = {12.3, 12.3}, tmp = {25.0, 25.0};
    auto s = coulomb_count(cur, vol, tmp, 60.0, {3.0, 12.3, 1.0, 0}, p, ocv);
    const double dc = s.concentration[1] - s.concentration[0];
    CHECK(dc == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.variance[1] - s.variance[0] == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("property: zero-gassing conservation and monotone variance") {
    auto ocv = OcvCurve::builtin_default();
    std::mt19937_64 g(11);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 2 + std::size_t(rng::index(g, 200));
        std::vector<double> cur(n), vol(n), tmp(n);
        for (std::size_t i = 0; i < n; ++i) {
            cur[i] = rng::uniform(g, -1.0, 3.0);
            vol[i] = rng::uniform(g, 12.0, 14.0);
            tmp[i] = rng::uniform(g, 10.0, 40.0);
        }
        GassingParams p = no_gassing();
        p.v_elec = rng::uniform(g, 0.2, 2.0);
        auto s = coulomb_count(cur, vol, tmp, 60.0, {3.5, vol[0], cur[0], 0}, p, ocv);
        double throughput = 0;
        for (std::size_t i = 0; i + 1 < n; ++i) throughput += cur[i] * 60.0;
        const double expected = throughput / (96485.0 * p.v_elec);
        const double got = s.concentration.back() - s.concentration.front();
        if (!s.clamped)
            CHECK(std::abs(got - expected) <= 1e-12 * std::max(1.0, std::abs(expected)));
        for (std::size_t i = 1; i < n; ++i) CHECK(s.variance[i] >= s.variance[i - 1]);

        // With gassing switched on, variance must stay monotone.
        GassingParams pg;
        auto sg = coulomb_count(cur, vol, tmp, 60.0, {3.5, vol[0], cur[0], 0}, pg, ocv);
        for (std::size_t i = 1; i < n; ++i) CHECK(sg.variance[i] >= sg.variance[i - 1]);
    }
}

TEST_CASE("noise variance: floor, hand value, flat-curve behaviour") {
    SUBCASE("zero accumulated variance gives the 0.0225 floor") {
        auto ocv = OcvCurve::builtin_default();
        SocSeries s;
        s.concentration = {3.0};
        s.variance = {0.0};
        auto nv = noise_variance(s, ocv);
        CHECK(nv[0] == 0.0225);
    }
    SUBCASE("slope of 2 V L/mol with variance 1e-4") {
        std::vector<double> c, v;
        for (int i = 0; i <= 10; ++i) {
            c.push_back(i);
            v.push_back(10.0 + 2.0 * i);  // exactly linear: dV/dc = 2
        }
        OcvCurve ocv(c, v);
        SocSeries s;
        s.concentration = {5.0};
        s.variance = {1e-4};
        auto nv = noise_variance(s, ocv);
        CHECK(nv[0] == doctest::Approx(0.0229).epsilon(1e-12));
    }
    SUBCASE("nearly flat curve region contributes nothing") {
        std::vector<double> c = {0, 1, 2, 3};
        std::vector<double> v = {12.0, 12.0 + 1e-9, 12.0 + 2e-9, 12.0 + 3e-9};
        OcvCurve ocv(c, v);
        SocSeries s;
        s.concentration = {1.5};
        s.variance = {10.0};
        auto nv = noise_variance(s, ocv);
        CHECK(nv[0] == doctest::Approx(0.0225).epsilon(1e-9));
    }
}

TEST_CASE("init_concentration anchors at the minimum-current step") {
    auto ocv = OcvCurve::builtin_default();
    std::vector<double> cur = {0.5, 0.02, 1.5};
    std::vector<double> vol = {12.2, 12.4, 12.9};
    auto init = init_concentration(cur, vol, ocv);
    CHECK(init.anchor_index == 1);
    CHECK(init.anchor_current == 0.02);
    CHECK(init.c0 == doctest::Approx(ocv.concentration(12.4)).epsilon(1e-12));
    std::vector<double> bad_v = {12.2, 19.0, 12.9};
    CHECK_THROWS_AS(init_concentration(cur, bad_v, ocv), DomainError);
}

TEST_CASE("electrolyte volume least squares") {
    const double v_elec_true = 1.2;
    const double slope = 0.318;  // V per mol/L
    auto make_data = [&](double noise_std, std::mt19937_64& g, std::vector<double>& q,
                         std::vector<double>& v) {
        q.clear();
        v.clear();
        for (int i = 0; i < 50; ++i) {
            const double ah = 0.4 * i;
            const double conc = 2.0 + ah * 3600.0 / (96485.0 * v_elec_true);
            q.push_back(ah);
            v.push_back(11.07 + slope * conc + noise_std * rng::normal(g));
        }
    };
    SUBCASE("noise-free inverse crime") {
        std::mt19937_64 g(1);
        std::vector<double> q, v;
        make_data(0.0, g, q, v);
        CHECK(fit_electrolyte_volume(q, v, slope) == doctest::Approx(v_elec_true).epsilon(1e-6));
    }
    SUBCASE("5 mV noise recovers within 5% over 100 trials") {
        std::mt19937_64 g(2);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> q, v;
            make_data(0.005, g, q, v);
            const double est = fit_electrolyte_volume(q, v, slope);
            CHECK(std::abs(est - v_elec_true) / v_elec_true < 0.05);
        }
    }
    SUBCASE("two points are insufficient") {
        std::vector<double> q = {0.0, 1.0}, v = {12.0, 12.1};
        CHECK_THROWS_AS(fit_electrolyte_volume(q, v, slope), DomainError);
    }
}

TEST_CASE("normalization") {
    CHECK(normalize(5.0, 5.0, 2.0) == 0.0);
    CHECK(normalize(2.0, 0.0, 1.0) == 2.0);
    CHECK(normalize_time(34'560'000.0) == 1.0);
    CHECK(normalize(5.0 + 2.0, 5.0, 2.0) == 1.0);
    CHECK_THROWS_AS(normalize(1.0, 0.0, 0.0), DomainError);
    // Invertibility property.
    std::mt19937_64 g(3);
    for (int i = 0; i < 100; ++i) {
        const double mean = rng::normal(g) * 10, sd = 0.1 + rng::u01(g) * 5, x = rng::normal(g) * 20;
        CHECK(denormalize(normalize(x, mean, sd), mean, sd) == doctest::Approx(x).epsilon(1e-12));
    }
}

TEST_CASE("default fixtures parse and match the built-in values") {
    auto ocv = OcvCurve::builtin_default();
    CHECK(ocv.voltage(4.0) == doctest::Approx(11.07 + 0.318 * 4.0).epsilon(1e-9));
    GassingParams p;
    p.validate();
    CHECK(p.faraday == 96485.0);
}
