#pragma once

#include <cstddef>
#include <thread>
#include <utility>
#include <vector>

#include "fusedce/errors.hpp"

namespace fusedce {

// Execution knobs. vocab_tile x d_tile is the cache-blocking of the inner
// dot-product loops; workers parallelize over positions. Results are
// bitwise deterministic for a fixed worker count: workers own contiguous
// position ranges, write disjoint slots, and partial buffers merge in
// worker-index order.
struct ExecPolicy {
    std::size_t workers = 1;
    std::size_t vocab_tile = 64;
    std::size_t d_tile = 64;
};

// Ceil-first split of [0, total) into `parts` contiguous ranges: the first
// (total mod parts) ranges get the ceiling size, the rest the floor.
inline std::vector<std::pair<std::size_t, std::size_t>> partition_ranges(std::size_t total,
                                                                         std::size_t parts) {
    if (parts == 0) {
        throw InvalidLayout("cannot partition into 0 parts");
    }
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    ranges.reserve(parts);
    const std::size_t base = total / parts;
    const std::size_t extra = total % parts;
    std::size_t lo = 0;
    for (std::size_t p = 0; p < parts; ++p) {
        const std::size_t len = base + (p < extra ? 1 : 0);
        ranges.emplace_back(lo, lo + len);
        lo += len;
    }
    return ranges;
}

// Runs fn(worker_index, lo, hi) over a ceil-first partition of [0, total).
// Empty ranges are skipped. With one worker everything runs inline.
template <typename Fn>
void for_each_range(std::size_t total, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || total <= 1) {
        if (total > 0) {
            fn(std::size_t{0}, std::size_t{0}, total);
        }
        return;
    }
    const auto ranges = partition_ranges(total, workers);
    std::vector<std::thread> threads;
    threads.reserve(ranges.size());
    for (std::size_t w = 0; w < ranges.size(); ++w) {
        const auto [lo, hi] = ranges[w];
        if (lo == hi) {
            continue;
        }
        threads.emplace_back([&fn, w, lo = lo, hi = hi] { fn(w, lo, hi); });
    }
    for (std::thread& t : threads) {
        t.join();
    }
}

}  // namespace fusedce
