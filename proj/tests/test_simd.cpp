#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "soh/rng.hpp"
#include "soh/simd/kernels.hpp"

using namespace soh;

namespace {

bool close_rel(double a, double b, double rel, double abs_tol = 5e-305) {
    return std::abs(a - b) <= rel * (std::abs(a) + std::abs(b)) + abs_tol;
}

}  // namespace

TEST_CASE("scalar exp_span matches std::exp exactly") {
    std::mt19937_64 g(1);
    std::vector<double> x(257), y(257);
    for (auto& v : x) v = rng::uniform(g, -40.0, 40.0);
    simd::ops_scalar().exp_span(x.data(), y.data(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::exp(x[i]));
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
    const simd::Ops* avx = simd::ops_avx2();
    if (!avx) return;  // host without AVX2: scalar path is the only one

    std::mt19937_64 g(2);
    SUBCASE("exp over wide range") {
        std::vector<double> x(1003);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng::uniform(g, -700.0, 700.0);
        x[0] = 0.0;
        x[1] = -745.2;
        x[2] = 709.7;
        x[3] = 1e-300;
        std::vector<double> ys(x.size()), ya(x.size());
        simd::ops_scalar().exp_span(x.data(), ys.data(), x.size());
        avx->exp_span(x.data(), ya.data(), x.size());
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(close_rel(ys[i], ya[i], 1e-13));
    }

    SUBCASE("gassing span") {
        simd::GassingCoeffs coeffs{0.004, 0.06, 25.0, 1.83, 13.38};
        std::vector<double> t(517), v(517), ys(517), ya(517);
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = rng::uniform(g, -5.0, 55.0);
            v[i] = rng::uniform(g, 10.0, 15.0);
        }
        simd::ops_scalar().gassing_span(t.data(), v.data(), t.size(), coeffs, ys.data());
        avx->gassing_span(t.data(), v.data(), t.size(), coeffs, ya.data());
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(close_rel(ys[i], ya[i], 1e-12));
    }

    SUBCASE("se cross row") {
        const std::size_t m = 21;  // odd to exercise the tail
        std::vector<double> ux(m), uy(m), uz(m), ys(m), ya(m);
        for (std::size_t j = 0; j < m; ++j) {
            ux[j] = rng::normal(g);
            uy[j] = rng::normal(g);
            uz[j] = rng::normal(g);
        }
        const double inv2[3] = {0.5, 0.125, 2.0};
        for (int rep = 0; rep < 50; ++rep) {
            const double px = rng::normal(g) * 3, py = rng::normal(g) * 3, pz = rng::normal(g) * 3;
            simd::ops_scalar().se_cross_row(px, py, pz, ux.data(), uy.data(), uz.data(), m, inv2,
                                            0.09, ys.data());
            avx->se_cross_row(px, py, pz, ux.data(), uy.data(), uz.data(), m, inv2, 0.09,
                              ya.data());
            for (std::size_t j = 0; j < m; ++j) CHECK(close_rel(ys[j], ya[j], 1e-12));
        }
    }
}

TEST_CASE("dispatcher selects a usable implementation") {
    const auto& ops = simd::ops();
    double x = 1.0, y = 0.0;
    ops.exp_span(&x, &y, 1);
    CHECK(y == doctest::Approx(std::exp(1.0)).epsilon(1e-13));
}
