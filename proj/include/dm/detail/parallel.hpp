#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace dm {

namespace detail {
inline std::atomic<int>& thread_count_slot() {
    static std::atomic<int> n{1};
    return n;
}
}  // namespace detail

inline void set_num_threads(int n) { detail::thread_count_slot().store(n < 1 ? 1 : n); }
inline int num_threads() { return detail::thread_count_slot().load(); }

namespace detail {

/// Runs fn(i) for i in [0, n). Work items must write to disjoint outputs;
/// the partition is by contiguous index blocks, so any thread count
/// produces the same stores.
template <typename F>
void parallel_for(size_t n, F&& fn) {
    int threads = num_threads();
    if (threads <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t t = std::min<size_t>(static_cast<size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (size_t w = 0; w < t; ++w) {
        size_t lo = n * w / t;
        size_t hi = n * (w + 1) / t;
        pool.emplace_back([lo, hi, &fn] {
            for (size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail
}  // namespace dm
