#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace grand {

/// Worker count for row-parallel kernels. GRAND_THREADS caps it.
inline std::size_t kernel_threads() {
    static const std::size_t count = [] {
        std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("GRAND_THREADS")) {
            try {
                long v = std::stol(env);
                if (v >= 1) return std::min<std::size_t>(hw, static_cast<std::size_t>(v));
            } catch (...) {
            }
        }
        return hw;
    }();
    return count;
}

/// Splits [0, n) into contiguous chunks. Each index is visited exactly once,
/// so results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 256) {
    const std::size_t threads = std::min(kernel_threads(), (n + min_chunk - 1) / min_chunk);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
}

}  // namespace grand
