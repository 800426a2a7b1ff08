#pragma once
// Static-partition worker pool helper. Work items [0, n) are split into
// contiguous ranges, one per worker; callers fold into per-worker state and
// merge afterwards with an order-independent operation.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace netdissect {

inline std::size_t effective_workers(std::size_t requested, std::size_t items) {
    return std::max<std::size_t>(1, std::min(requested == 0 ? 1 : requested, std::max<std::size_t>(items, 1)));
}

// fn(worker, begin, end). Exceptions from any worker are rethrown (first by
// worker index) after all threads join.
template <class Fn>
void run_partitioned(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = effective_workers(workers, n);
    if (workers == 1) {
        fn(std::size_t{0}, std::size_t{0}, n);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        std::size_t b = n * w / workers, e = n * (w + 1) / workers;
        threads.emplace_back([&, w, b, e] {
            try {
                fn(w, b, e);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace netdissect
