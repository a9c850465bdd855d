#include <cmath>

#include "soh/simd/kernels.hpp"

namespace soh::simd {

namespace {

void exp_span_scalar(const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void gassing_span_scalar(const double* temp_c, const double* volt_v, std::size_t n,
                         const GassingCoeffs& g, double* out) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = g.i_gas0 * std::exp(g.c_t * (temp_c[i] - g.t0) + g.c_v * (volt_v[i] - g.v0ref));
}

void se_cross_row_scalar(double px, double py, double pz, const double* ux, const double* uy,
                         const double* uz, std::size_t m, const double inv_two_l2[3],
                         double sigma2, double* out) {
    for (std::size_t j = 0; j < m; ++j) {
        const double dx = px - ux[j];
        const double dy = py - uy[j];
        const double dz = pz - uz[j];
        const double q = inv_two_l2[0] * dx * dx + inv_two_l2[1] * dy * dy + inv_two_l2[2] * dz * dz;
        out[j] = sigma2 * std::exp(-q);
    }
}

}  // namespace

const Ops& ops_scalar() {
    static const Ops k{"scalar", exp_span_scalar, gassing_span_scalar, se_cross_row_scalar};
    return k;
}

}  // namespace soh::simd
