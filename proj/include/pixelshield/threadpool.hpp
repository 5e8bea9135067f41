#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace pxs {

// Runs fn(0..n-1) across up to `jobs` threads. Callers must keep outputs
// indexed by i; any cross-item reduction happens after the join, in index
// order, so results do not depend on scheduling.
inline void parallel_for(int n, int jobs, const std::function<void(int, int)>& fn) {
    const int threads = std::max(1, std::min(jobs, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i, 0);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            try {
                while (true) {
                    const int i = next.fetch_add(1);
                    if (i >= n) break;
                    fn(i, t);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace pxs
