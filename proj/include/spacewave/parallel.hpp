#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace spacewave {

/// Calls fn(i) for i in [0, n) on up to `threads` threads. Work is handed out dynamically, so fn
/// must write only to its own result slot. The first exception stops the pool and is rethrown.
template <class F>
void parallel_for(int n, int threads, F&& fn) {
    const int n_threads = std::max(1, std::min(threads, n));
    if (n_threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            while (true) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next.store(n);
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace spacewave
