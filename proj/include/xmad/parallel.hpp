#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace xmad {

/// Splits [0, n) into at most `workers` contiguous chunks and runs
/// fn(begin, end, chunk) on each, the first chunk on the calling thread.
/// The first exception thrown by any chunk (lowest chunk index) is rethrown.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        if (n > 0) fn(std::size_t{0}, n, std::size_t{0});
        return;
    }
    const std::size_t step = (n + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    auto run = [&](std::size_t chunk) {
        const std::size_t begin = chunk * step;
        const std::size_t end = std::min(n, begin + step);
        if (begin >= end) return;
        try {
            fn(begin, end, chunk);
        } catch (...) {
            errors[chunk] = std::current_exception();
        }
    };
    for (std::size_t c = 1; c < workers; ++c) threads.emplace_back(run, c);
    run(0);
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Number of chunks parallel_chunks will use.
inline std::size_t chunk_count(std::size_t n, std::size_t workers) {
    return std::max<std::size_t>(1, std::min(workers, n));
}

}  // namespace xmad
