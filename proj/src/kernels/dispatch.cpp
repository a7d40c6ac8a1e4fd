#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "splitcom/kernels.hpp"

namespace splitcom::kern {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const Ops* resolve(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return &scalar_ops();
        case Backend::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
            if (cpu_has_avx2()) return &avx2_ops();
#endif
            throw std::runtime_error("AVX2 kernels requested but not supported on this CPU");
        case Backend::Auto:
        default:
#if defined(__x86_64__) || defined(_M_X64)
            if (cpu_has_avx2()) return &avx2_ops();
#endif
            return &scalar_ops();
    }
}

Backend env_backend() {
    const char* env = std::getenv("SPLITCOM_KERNELS");
    if (env == nullptr || std::strcmp(env, "auto") == 0) return Backend::Auto;
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0) return Backend::Avx2;
    throw std::runtime_error(std::string("unknown SPLITCOM_KERNELS value: ") + env);
}

const Ops*& active_slot() {
    static const Ops* slot = resolve(env_backend());
    return slot;
}

}  // namespace

const Ops& active() { return *active_slot(); }

void force_backend(Backend b) { active_slot() = resolve(b); }

std::string active_name() { return active().name; }

}  // namespace splitcom::kern
