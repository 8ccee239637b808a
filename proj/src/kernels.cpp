#include "arlk/kernels.hpp"

#include <cstdlib>

namespace arlk::kernels {

const Ops* avx2_table_impl();  // defined in kernels_avx2.cpp

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops* avx2_ops() {
    if (!avx2_supported()) return nullptr;
    return avx2_table_impl();
}

const Ops& ops() {
    static const Ops* active = [] {
        const char* force = std::getenv("ARLK_FORCE_SCALAR");
        if (force && force[0] == '1') return &scalar_ops();
        if (const Ops* t = avx2_ops()) return t;
        return &scalar_ops();
    }();
    return *active;
}

}  // namespace arlk::kernels
