#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace rsalab {

inline unsigned effective_threads(unsigned requested) {
    if (requested != 0) return requested;
    const unsigned n = std::thread::hardware_concurrency();
    return n ? n : 1;
}

/// Invoke fn(begin, end) over disjoint chunks of [0, n). Callers must write
/// only to chunk-local outputs, so results do not depend on thread count.
template <typename F>
void parallel_chunks(std::size_t n, unsigned threads, F&& fn) {
    threads = effective_threads(threads);
    if (threads <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t k = std::min<std::size_t>(threads, n);
    const std::size_t chunk = (n + k - 1) / k;
    std::vector<std::thread> pool;
    pool.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t b = i * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace rsalab
