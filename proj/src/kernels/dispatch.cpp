#include <cstdlib>
#include <string>
#include <vector>

#include "etma/common.hpp"
#include "etma/kernels.hpp"

namespace etma::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const Backend* avx2_backend_impl();  // defined in kernels_avx2.cpp

static bool cpu_has_avx2_fma() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

const std::vector<const Backend*>& available_backends() {
    static const std::vector<const Backend*> backends = [] {
        std::vector<const Backend*> v{&scalar_backend()};
#if defined(__x86_64__) || defined(_M_X64)
        if (cpu_has_avx2_fma()) v.push_back(avx2_backend_impl());
#endif
        return v;
    }();
    return backends;
}

namespace {

const Backend* g_active = nullptr;

const Backend* find_backend(const std::string& name) {
    for (const Backend* b : available_backends()) {
        if (name == b->name) return b;
    }
    return nullptr;
}

const Backend* initial_backend() {
    if (const char* env = std::getenv("ETMA_KERNELS")) {
        if (const Backend* b = find_backend(env)) return b;
        throw ConfigError(std::string("ETMA_KERNELS names an unavailable backend: ") + env);
    }
    return available_backends().back();
}

}  // namespace

const Backend& active() {
    if (!g_active) g_active = initial_backend();
    return *g_active;
}

void select(const std::string& name) {
    const Backend* b = find_backend(name);
    if (!b) throw ConfigError("kernel backend not available: " + name);
    g_active = b;
}

}  // namespace etma::kernels
