#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace biased_erm {

/// Worker count: `BIASED_ERM_LAB_THREADS` when set to a positive integer,
/// otherwise the hardware concurrency (at least 1).
inline std::size_t thread_count() {
    if (const char* env = std::getenv("BIASED_ERM_LAB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Splits [0, n) into contiguous chunks and runs `body(begin, end, chunk)`
/// for each. Chunk boundaries depend only on `n` and the worker count; callers
/// that need identical results for any worker count must merge with an
/// order-independent reduction.
template <class Body>
void parallel_chunks(std::size_t n, Body&& body) {
    const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(n, 1));
    if (workers <= 1 || n < 2) {
        body(std::size_t{0}, n, std::size_t{0});
        return;
    }
    const std::size_t step = (n + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * step;
            const std::size_t end = std::min(n, begin + step);
            if (begin >= end) break;
            pool.emplace_back([&, begin, end, w] {
                try {
                    body(begin, end, w);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Runs `fn(i)` for every i in [0, n).
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    parallel_chunks(n, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
    });
}

}  // namespace biased_erm
