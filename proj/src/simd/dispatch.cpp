#include <atomic>
#include <cstdlib>
#include <cstring>

#include "soh/common.hpp"
#include "soh/simd/kernels.hpp"

namespace soh::simd {

#if !defined(SOH_HAVE_AVX2_TU)
const Ops* ops_avx2() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops* select_initial() {
    const char* env = std::getenv("SOH_SIMD");
    if (env && std::strcmp(env, "scalar") == 0) return &ops_scalar();
    if (env && std::strcmp(env, "avx2") == 0) {
        const Ops* a = ops_avx2();
        if (!a || !cpu_has_avx2()) throw ConfigError("SOH_SIMD=avx2 requested but AVX2 unavailable");
        return a;
    }
    if (const Ops* a = ops_avx2(); a && cpu_has_avx2()) return a;
    return &ops_scalar();
}

std::atomic<const Ops*>& active_slot() {
    static std::atomic<const Ops*> slot{select_initial()};
    return slot;
}

}  // namespace

const Ops& ops() { return *active_slot().load(std::memory_order_relaxed); }

Isa active_isa() {
    return active_slot().load(std::memory_order_relaxed) == &ops_scalar() ? Isa::scalar : Isa::avx2;
}

void force_isa(Isa isa) {
    if (isa == Isa::scalar) {
        active_slot().store(&ops_scalar());
        return;
    }
    const Ops* a = ops_avx2();
    if (!a || !cpu_has_avx2()) throw ConfigError("AVX2 path unavailable on this host");
    active_slot().store(a);
}

}  // namespace soh::simd
