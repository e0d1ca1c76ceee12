#include "mtms/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>

namespace mtms::kernels {
namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const Backend* widest_available() {
    if (const Backend* b = avx2_backend(); b != nullptr && cpu_has_avx2()) return b;
    return &scalar_backend();
}

const Backend* resolve(const std::string& name) {
    if (name == "auto") return widest_available();
    if (name == "scalar") return &scalar_backend();
    if (name == "avx2") {
        const Backend* b = avx2_backend();
        if (b == nullptr) throw std::invalid_argument("avx2 kernels not compiled in");
        if (!cpu_has_avx2()) throw std::invalid_argument("avx2 not supported by this CPU");
        return b;
    }
    throw std::invalid_argument("unknown kernel backend: " + name);
}

std::atomic<const Backend*>& active_slot() {
    static std::atomic<const Backend*> slot{nullptr};
    return slot;
}

const Backend* init_from_env() {
    if (const char* env = std::getenv("MTMS_KERNELS"); env != nullptr && env[0] != '\0') {
        return resolve(env);
    }
    return widest_available();
}

} // namespace

const Backend& active() {
    auto& slot = active_slot();
    const Backend* b = slot.load(std::memory_order_acquire);
    if (b == nullptr) {
        b = init_from_env();
        slot.store(b, std::memory_order_release);
    }
    return *b;
}

void select(const std::string& name) {
    active_slot().store(resolve(name), std::memory_order_release);
}

std::vector<const Backend*> available() {
    std::vector<const Backend*> out;
    out.push_back(&scalar_backend());
    if (const Backend* b = avx2_backend(); b != nullptr && cpu_has_avx2()) out.push_back(b);
    return out;
}

} // namespace mtms::kernels
