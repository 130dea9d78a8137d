// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_PARALLEL_HPP
#define DIFFSPLAT_PARALLEL_HPP

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace diffsplat {

// Global worker count. Every reduction in the library is owned by exactly one
// loop index (cells sum over points in index order, points sum over cells in
// index order), so results are bit-identical for any thread count.
inline int& thread_count() {
    static int n = [] {
        if (const char* env = std::getenv("DIFFSPLAT_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return n;
}

inline void set_thread_count(int n) { thread_count() = std::max(1, n); }

/// Runs fn(begin, end) over disjoint chunks of [begin, end).
template <typename Fn>
void parallel_for(std::int64_t begin, std::int64_t end, Fn&& fn) {
    const std::int64_t n = end - begin;
    const int workers = thread_count();
    if (n <= 0) return;
    if (workers <= 1 || n < 2 * workers) {
        fn(begin, end);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::int64_t lo = begin + w * chunk;
        const std::int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

} // namespace diffsplat

#endif // DIFFSPLAT_PARALLEL_HPP
