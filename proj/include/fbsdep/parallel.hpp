#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fbsdep {

/// Worker count: FBSDEP_THREADS if set, else hardware concurrency.
inline unsigned worker_count() {
    if (const char* env = std::getenv("FBSDEP_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(begin, end) on contiguous blocks of [0, count). Blocks are
/// independent, so results never depend on the thread count. The first
/// exception thrown by any block is rethrown.
template <class Fn>
void parallel_blocks(std::size_t count, Fn&& fn, std::size_t min_block = 2048) {
    const std::size_t workers =
        std::min<std::size_t>(worker_count(), std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_block)));
    if (workers <= 1) {
        fn(std::size_t{0}, count);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first;
    std::mutex m;
    const std::size_t per = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * per, e = std::min(count, b + per);
        if (b >= e) break;
        pool.emplace_back([&, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                std::lock_guard lock(m);
                if (!first) first = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

}  // namespace fbsdep
