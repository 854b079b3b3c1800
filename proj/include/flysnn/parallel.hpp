#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace flysnn {

// Runs body(i) for i in [0, n) on up to `workers` threads. Work items are
// claimed dynamically, so body must only write to state owned by item i.
// The first exception thrown by any item is rethrown on the caller thread.
template <typename Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
    workers = std::max(1u, workers);
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    const unsigned spawned = static_cast<unsigned>(std::min<std::size_t>(workers, n)) - 1;
    std::vector<std::jthread> threads;
    threads.reserve(spawned);
    for (unsigned t = 0; t < spawned; ++t) threads.emplace_back(run);
    run();
    threads.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace flysnn
