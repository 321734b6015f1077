#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace voxcal::par {

// Worker cap shared by all parallel loops. Results never depend on it:
// work is split into fixed-size chunks and partial results are folded in
// chunk order, so any thread count produces bit-identical numbers.
inline int& thread_limit() {
    static int limit = 0; // 0 = use hardware concurrency
    return limit;
}

inline void set_threads(int n) { thread_limit() = n < 0 ? 0 : n; }

inline int effective_threads() {
    int limit = thread_limit();
    if (limit > 0) return limit;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline constexpr std::size_t kChunkSize = 1u << 16;

namespace detail {

template <typename Fn>
void run_chunks(std::size_t chunk_count, Fn&& body) {
    int workers = effective_threads();
    if (workers > static_cast<int>(chunk_count)) workers = static_cast<int>(chunk_count);
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunk_count; ++c) body(c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t c = next.fetch_add(1, std::memory_order_relaxed);
                if (c >= chunk_count) return;
                body(c);
            }
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace detail

// Runs fn(begin, end) over disjoint ranges covering [0, n).
template <typename Fn>
void for_ranges(std::size_t n, Fn&& fn) {
    if (n == 0) return;
    std::size_t chunks = (n + kChunkSize - 1) / kChunkSize;
    detail::run_chunks(chunks, [&](std::size_t c) {
        std::size_t begin = c * kChunkSize;
        std::size_t end = begin + kChunkSize < n ? begin + kChunkSize : n;
        fn(begin, end);
    });
}

// Maps fixed-size chunks of [0, n) through map(begin, end) -> T and folds
// the partials left to right with fold(acc, partial). The chunk size is a
// constant, so the fold order (and thus the result) is thread-invariant.
template <typename T, typename MapFn, typename FoldFn>
T ordered_reduce(std::size_t n, T init, MapFn&& map, FoldFn&& fold) {
    if (n == 0) return init;
    std::size_t chunks = (n + kChunkSize - 1) / kChunkSize;
    std::vector<T> partials(chunks);
    detail::run_chunks(chunks, [&](std::size_t c) {
        std::size_t begin = c * kChunkSize;
        std::size_t end = begin + kChunkSize < n ? begin + kChunkSize : n;
        partials[c] = map(begin, end);
    });
    T acc = std::move(init);
    for (auto& p : partials) acc = fold(std::move(acc), std::move(p));
    return acc;
}

// Runs fn(i) for i in [0, n) where each index owns disjoint output.
template <typename Fn>
void for_each_index(std::size_t n, Fn&& fn) {
    detail::run_chunks(n, [&](std::size_t i) { fn(i); });
}

} // namespace voxcal::par
