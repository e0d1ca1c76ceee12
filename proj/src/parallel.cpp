#include "mtms/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace mtms {

namespace {
std::atomic<std::size_t> g_thread_cap{0};
}

void set_thread_cap(std::size_t n) { g_thread_cap.store(n); }

std::size_t thread_cap() {
    const std::size_t cap = g_thread_cap.load();
    if (cap > 0) return cap;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t threads) {
    if (n == 0) return;
    std::size_t workers = threads > 0 ? threads : thread_cap();
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    // contiguous chunks: worker w handles [w*base + min(w, rem) ...)
    const std::size_t base = n / workers;
    const std::size_t rem = n % workers;
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * base + std::min(w, rem);
        const std::size_t end = begin + base + (w < rem ? 1 : 0);
        pool.emplace_back([&, w, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace mtms
