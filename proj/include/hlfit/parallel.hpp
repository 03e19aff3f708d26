#ifndef HLFIT_PARALLEL_HPP
#define HLFIT_PARALLEL_HPP

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hlfit {

// Runs fn(0..n-1) on up to `workers` threads. Tasks write to disjoint,
// preallocated slots and any reduction happens in index order afterwards, so
// results do not depend on the worker count. The first exception thrown by a
// task is rethrown on the calling thread.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int used = std::min(workers, n);
    std::vector<std::thread> threads;
    std::exception_ptr error;
    std::mutex error_mutex;
    std::atomic<int> next{0};
    for (int w = 0; w < used; ++w) {
        threads.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace hlfit

#endif
