#include "pan/kernels.hpp"

#include <cstdlib>
#include <string>

#include "pan/errors.hpp"

namespace pan {

// Defined in kernels_avx2.cpp; nullptr when the build has no AVX2 path.
const KernelTable* avx2_kernels_impl();

namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* g_active = nullptr;

KernelBackend backend_from_env() {
    const char* env = std::getenv("PAN_KERNELS");
    if (env == nullptr || *env == '\0')
        return KernelBackend::Auto;
    std::string v(env);
    if (v == "scalar") return KernelBackend::Scalar;
    if (v == "avx2") return KernelBackend::Avx2;
    if (v == "auto") return KernelBackend::Auto;
    throw ParameterError("PAN_KERNELS must be scalar, avx2 or auto; got \"" + v + "\"");
}

} // namespace

const KernelTable* avx2_kernels() {
    const KernelTable* t = avx2_kernels_impl();
    if (t == nullptr || !cpu_has_avx2())
        return nullptr;
    return t;
}

void select_kernels(KernelBackend backend) {
    switch (backend) {
    case KernelBackend::Scalar:
        g_active = &scalar_kernels();
        return;
    case KernelBackend::Avx2: {
        const KernelTable* t = avx2_kernels();
        if (t == nullptr)
            throw ParameterError("avx2 kernels are not available on this CPU/build");
        g_active = t;
        return;
    }
    case KernelBackend::Auto: {
        const KernelTable* t = avx2_kernels();
        g_active = t != nullptr ? t : &scalar_kernels();
        return;
    }
    }
    throw ParameterError("unknown kernel backend");
}

const KernelTable& kernels() {
    if (g_active == nullptr)
        select_kernels(backend_from_env());
    return *g_active;
}

} // namespace pan
