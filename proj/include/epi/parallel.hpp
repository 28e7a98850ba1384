#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace epi {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is split into
/// contiguous index blocks, so writers indexed by i never contend and results
/// are independent of scheduling. The first exception thrown by any worker is
/// rethrown on the caller.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (size_t w = 0; w < workers; ++w) {
        const size_t lo = n * w / workers;
        const size_t hi = n * (w + 1) / workers;
        pool.emplace_back([&, lo, hi, w] {
            try {
                for (size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace epi
