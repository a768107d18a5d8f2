#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace fbsde {

// Paths are processed in fixed-size blocks. Per-block results are stored in
// block order and combined serially afterwards, so every reduction is
// independent of how many workers ran the blocks. That invariance is what
// makes outputs reproducible across worker counts.
inline constexpr std::int64_t kPathBlock = 4096;

inline int resolve_workers(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline std::int64_t block_count(std::int64_t n_items, std::int64_t block = kPathBlock) {
    return (n_items + block - 1) / block;
}

// Runs fn(block_index, begin, end) over [0, n_items) split into fixed-size
// chunks. fn must only write to state owned by its block (or disjoint
// per-item slots).
template <class Fn>
void for_each_block(std::int64_t n_items, int workers, Fn&& fn, std::int64_t block = kPathBlock) {
    const std::int64_t nb = block_count(n_items, block);
    workers = resolve_workers(workers);
    if (workers <= 1 || nb <= 1) {
        for (std::int64_t b = 0; b < nb; ++b)
            fn(b, b * block, std::min(n_items, (b + 1) * block));
        return;
    }
    std::atomic<std::int64_t> next{0};
    auto run = [&] {
        for (;;) {
            std::int64_t b = next.fetch_add(1);
            if (b >= nb) return;
            fn(b, b * block, std::min(n_items, (b + 1) * block));
        }
    };
    std::vector<std::thread> pool;
    int nthreads = static_cast<int>(std::min<std::int64_t>(workers, nb));
    pool.reserve(static_cast<std::size_t>(nthreads - 1));
    for (int w = 1; w < nthreads; ++w) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
}

}  // namespace fbsde
