// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be reached through the dispatcher after a cpuid check.

#include "soh/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <cstdint>

namespace soh::simd {

namespace {

// exp(x) over 4 lanes: Cody-Waite range reduction against ln2, degree-13
// Taylor polynomial on |r| <= ln2/2, then exact scaling by 2^n.
inline __m256d exp4(__m256d x) {
    const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
    const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
    const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
    const __m256d min_x = _mm256_set1_pd(-745.13321910194110842);
    const __m256d max_x = _mm256_set1_pd(709.78271289338399684);

    __m256d xc = _mm256_min_pd(_mm256_max_pd(x, min_x), max_x);
    __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, log2e),
                                _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(n, ln2_hi, xc);
    r = _mm256_fnmadd_pd(n, ln2_lo, r);

    // Horner over 1/k!, k = 13..0.
    __m256d p = _mm256_set1_pd(1.6059043836821614599e-10);  // 1/13!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(2.0876756987868098979e-09));   // 1/12!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(2.5052108385441718775e-08));   // 1/11!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(2.7557319223985890653e-07));   // 1/10!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(2.7557319223985892510e-06));   // 1/9!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(2.4801587301587301566e-05));   // 1/8!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.9841269841269841253e-04));   // 1/7!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.3888888888888889419e-03));   // 1/6!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(8.3333333333333332177e-03));   // 1/5!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(4.1666666666666664354e-02));   // 1/4!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.6666666666666665741e-01));   // 1/3!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(5.0000000000000000000e-01));   // 1/2!
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

    // 2^n via exponent-field arithmetic; n is within [-1075, 1024] after the
    // clamp above, split the scaling in two to stay clear of overflow in the
    // intermediate for large-magnitude n.
    __m256d half_n = _mm256_round_pd(_mm256_mul_pd(n, _mm256_set1_pd(0.5)),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d rest_n = _mm256_sub_pd(n, half_n);
    auto pow2 = [](__m256d k) {
        __m128i ki = _mm256_cvtpd_epi32(k);
        __m256i ke = _mm256_cvtepi32_epi64(ki);
        __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ke, _mm256_set1_epi64x(1023)), 52);
        return _mm256_castsi256_pd(bits);
    };
    p = _mm256_mul_pd(p, pow2(half_n));
    p = _mm256_mul_pd(p, pow2(rest_n));
    return p;
}

void exp_span_avx2(const double* x, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, exp4(_mm256_loadu_pd(x + i)));
    for (; i < n; ++i) {
        double buf[4] = {x[i], 0, 0, 0};
        double res[4];
        _mm256_storeu_pd(res, exp4(_mm256_loadu_pd(buf)));
        out[i] = res[0];
    }
}

void gassing_span_avx2(const double* temp_c, const double* volt_v, std::size_t n,
                       const GassingCoeffs& g, double* out) {
    const __m256d ct = _mm256_set1_pd(g.c_t);
    const __m256d cv = _mm256_set1_pd(g.c_v);
    const __m256d t0 = _mm256_set1_pd(g.t0);
    const __m256d v0 = _mm256_set1_pd(g.v0ref);
    const __m256d ig = _mm256_set1_pd(g.i_gas0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d a = _mm256_mul_pd(ct, _mm256_sub_pd(_mm256_loadu_pd(temp_c + i), t0));
        a = _mm256_fmadd_pd(cv, _mm256_sub_pd(_mm256_loadu_pd(volt_v + i), v0), a);
        _mm256_storeu_pd(out + i, _mm256_mul_pd(ig, exp4(a)));
    }
    for (; i < n; ++i)
        out[i] = g.i_gas0 * std::exp(g.c_t * (temp_c[i] - g.t0) + g.c_v * (volt_v[i] - g.v0ref));
}

void se_cross_row_avx2(double px, double py, double pz, const double* ux, const double* uy,
                       const double* uz, std::size_t m, const double inv_two_l2[3],
                       double sigma2, double* out) {
    const __m256d vpx = _mm256_set1_pd(px);
    const __m256d vpy = _mm256_set1_pd(py);
    const __m256d vpz = _mm256_set1_pd(pz);
    const __m256d a0 = _mm256_set1_pd(inv_two_l2[0]);
    const __m256d a1 = _mm256_set1_pd(inv_two_l2[1]);
    const __m256d a2 = _mm256_set1_pd(inv_two_l2[2]);
    const __m256d s2 = _mm256_set1_pd(sigma2);
    std::size_t j = 0;
    for (; j + 4 <= m; j += 4) {
        __m256d dx = _mm256_sub_pd(vpx, _mm256_loadu_pd(ux + j));
        __m256d dy = _mm256_sub_pd(vpy, _mm256_loadu_pd(uy + j));
        __m256d dz = _mm256_sub_pd(vpz, _mm256_loadu_pd(uz + j));
        __m256d q = _mm256_mul_pd(a0, _mm256_mul_pd(dx, dx));
        q = _mm256_fmadd_pd(a1, _mm256_mul_pd(dy, dy), q);
        q = _mm256_fmadd_pd(a2, _mm256_mul_pd(dz, dz), q);
        __m256d e = exp4(_mm256_sub_pd(_mm256_setzero_pd(), q));
        _mm256_storeu_pd(out + j, _mm256_mul_pd(s2, e));
    }
    for (; j < m; ++j) {
        const double dx = px - ux[j];
        const double dy = py - uy[j];
        const double dz = pz - uz[j];
        const double q = inv_two_l2[0] * dx * dx + inv_two_l2[1] * dy * dy + inv_two_l2[2] * dz * dz;
        double buf[4] = {-q, 0, 0, 0};
        double res[4];
        _mm256_storeu_pd(res, exp4(_mm256_loadu_pd(buf)));
        out[j] = sigma2 * res[0];
    }
}

}  // namespace

const Ops* ops_avx2() {
    static const Ops k{"avx2", exp_span_avx2, gassing_span_avx2, se_cross_row_avx2};
    return &k;
}

}  // namespace soh::simd

#else

namespace soh::simd {
const Ops* ops_avx2() { return nullptr; }
}  // namespace soh::simd

#endif
