#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace neurove {

/// Worker budget for embarrassingly parallel stages (data generation and
/// encoding). NEUROVE_THREADS caps it; hardware concurrency is the default.
inline std::size_t worker_limit() {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("NEUROVE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1 && static_cast<std::size_t>(v) < n) n = static_cast<std::size_t>(v);
    }
    return n;
}

/// Runs fn(i) for i in [0, n). Work items must be independent; results keyed
/// by index stay deterministic regardless of the worker count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_limit(), n == 0 ? std::size_t{1} : n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace neurove
