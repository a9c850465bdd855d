#pragma once

#include <cstddef>

namespace soh::simd {

struct GassingCoeffs {
    double i_gas0;
    double c_t;
    double t0;
    double c_v;
    double v0ref;
};

// Hot elementwise primitives. Each has a scalar reference implementation and
// an AVX2 variant selected once at startup; the two are equivalence-tested.
struct Ops {
    const char* name;

    // out[i] = exp(x[i])
    void (*exp_span)(const double* x, double* out, std::size_t n);

    // out[i] = i_gas0 * exp(c_t*(temp[i]-t0) + c_v*(volt[i]-v0ref))
    void (*gassing_span)(const double* temp_c, const double* volt_v, std::size_t n,
                         const GassingCoeffs& g, double* out);

    // out[j] = sigma2 * exp(-(a0*(px-ux[j])^2 + a1*(py-uy[j])^2 + a2*(pz-uz[j])^2))
    // with a = inv_two_l2 (1/(2*l^2) per coordinate). Inducing points in SoA.
    void (*se_cross_row)(double px, double py, double pz, const double* ux, const double* uy,
                         const double* uz, std::size_t m, const double inv_two_l2[3],
                         double sigma2, double* out);
};

enum class Isa { scalar, avx2 };

const Ops& ops();        // active implementation
Isa active_isa();
const Ops& ops_scalar();
const Ops* ops_avx2();   // nullptr when the CPU or build lacks AVX2
void force_isa(Isa isa); // test hook; throws if unavailable

}  // namespace soh::simd
