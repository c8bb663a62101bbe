#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/detail/kernels.hpp"
#include "fusedce/exec.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/reduction.hpp"
#include "fusedce/softmax_stats.hpp"

namespace fusedce {

// Loss plus the per-position stats cache the backward pass reuses. Ignored
// positions keep identity stats; every other position has target_found set
// and a > 0.
template <typename T>
struct FusedOutput {
    LossValue<T> loss;
    std::vector<SoftmaxStats<T>> stats;
};

// Window-based vocabulary chunking: windows partition [0, V) into
// ceil(V / window_size) contiguous ranges, the last possibly short.
struct WindowConfig {
    std::size_t window_size = 0;
    std::size_t worker_count = 1;
};

namespace detail {

// Per-position tracking entry: a global target index to record, kNoTarget
// to stream without recording, or kSkipPosition to not stream at all.
inline constexpr std::int64_t kNoTarget = -1;
inline constexpr std::int64_t kSkipPosition = -2;

// Streams logits for positions [n_lo, n_hi) over the local weight rows
// [v_lo, v_hi) of `weights` (whose row 0 is global vocabulary index
// v_offset), folding each into stats[n]. Weight tiles sit in the outer loop
// so they stay cache-resident across positions; within a position the
// update order is always ascending v, which keeps the recurrence bitwise
// reproducible no matter how the loop is blocked.
template <typename T>
void accumulate_stats_block(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                            std::size_t v_offset, std::size_t v_lo, std::size_t v_hi,
                            std::size_t n_lo, std::size_t n_hi, const std::int64_t* track,
                            const ExecPolicy& policy, SoftmaxStats<T>* stats) {
    const std::size_t d = hidden.cols;
    const std::size_t tile = std::max<std::size_t>(policy.vocab_tile, 1);
    for (std::size_t vt = v_lo; vt < v_hi; vt += tile) {
        const std::size_t vt_hi = std::min(vt + tile, v_hi);
        for (std::size_t n = n_lo; n < n_hi; ++n) {
            if (track[n] == kSkipPosition) {
                continue;
            }
            const T* h = hidden.row(n);
            const std::int64_t want = track[n] - static_cast<std::int64_t>(v_offset);
            SoftmaxStats<T> s = stats[n];
            for (std::size_t v = vt; v < vt_hi; ++v) {
                const T z = dot(h, weights.row(v), d, policy.d_tile);
                s.update(z);
                if (static_cast<std::int64_t>(v) == want) {
                    s.update_target(z);
                }
            }
            stats[n] = s;
        }
    }
}

// Builds the tracking array from targets: ignored positions are skipped
// entirely, everything else records its global target index.
inline std::vector<std::int64_t> tracking_from_targets(const TargetVector& targets) {
    std::vector<std::int64_t> track(targets.size());
    for (std::size_t n = 0; n < targets.size(); ++n) {
        track[n] = targets.is_ignored(n) ? kSkipPosition : targets[n];
    }
    return track;
}

// Shared forward core: per worker, streams each window in ascending order
// and folds the window stats into the merged per-position stats. The
// single-window case degenerates to the plain streaming recurrence (merging
// with the identity is exact), so the unwindowed and windowed paths share
// these bits verbatim.
template <typename T>
void forward_core(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                  const TargetVector& targets, std::size_t window_size, std::size_t workers,
                  const ExecPolicy& policy, MemoryLedger& ledger,
                  std::vector<SoftmaxStats<T>>& merged, std::vector<T>& losses) {
    const std::size_t n = hidden.rows;
    const std::size_t vocab = weights.rows;
    const std::size_t window = std::min(std::max<std::size_t>(window_size, 1), std::max<std::size_t>(vocab, 1));

    const std::vector<std::int64_t> track = tracking_from_targets(targets);

    // The stats cache, the one reused window partial and the loss buffer:
    // everything the pass allocates, and all of it independent of V.
    ScopedCharge merged_charge(ledger, n * sizeof(SoftmaxStats<T>));
    ScopedCharge window_charge(ledger, n * sizeof(SoftmaxStats<T>));
    ScopedCharge loss_charge(ledger, n * sizeof(T));

    merged.assign(n, SoftmaxStats<T>{});
    losses.assign(n, T{0});
    std::vector<SoftmaxStats<T>> window_stats(n);

    for_each_range(n, workers, [&](std::size_t, std::size_t n_lo, std::size_t n_hi) {
        for (std::size_t lo = 0; lo < vocab; lo += window) {
            const std::size_t hi = std::min(lo + window, vocab);
            accumulate_stats_block(hidden, weights, 0, lo, hi, n_lo, n_hi, track.data(), policy,
                                   window_stats.data());
            for (std::size_t i = n_lo; i < n_hi; ++i) {
                if (track[i] == kSkipPosition) {
                    continue;
                }
                merged[i] = merge_stats(merged[i], window_stats[i]);
                window_stats[i] = SoftmaxStats<T>{};
            }
        }
        for (std::size_t i = n_lo; i < n_hi; ++i) {
            if (track[i] == kSkipPosition) {
                continue;
            }
            losses[i] = merged[i].loss();
        }
    });
}

}  // namespace detail

// Streaming stats over the logits of one position restricted to the
// vocabulary range [lo, hi). The empty range returns the identity stats.
template <typename T>
SoftmaxStats<T> stream_stats(std::span<const T> h, const MatrixView<T>& weights,
                             std::optional<std::int64_t> target, std::size_t lo, std::size_t hi,
                             const ExecPolicy& policy = {}) {
    if (h.size() != weights.cols) {
        throw DimensionMismatch("hidden length " + std::to_string(h.size()) + " != weight cols " +
                                std::to_string(weights.cols));
    }
    if (lo > hi || hi > weights.rows) {
        throw DimensionMismatch("vocab range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                ") not contained in [0, " + std::to_string(weights.rows) + ")");
    }
    SoftmaxStats<T> s;
    const std::int64_t track = target.value_or(detail::kNoTarget);
    MatrixView<T> hidden(h.data(), 1, h.size());
    detail::accumulate_stats_block(hidden, weights, 0, lo, hi, 0, 1, &track, policy, &s);
    return s;
}

// Fused projection + cross-entropy forward: computes per-position losses
// and the (m, a, z_target) cache straight from H and W, never materializing
// the N x V logits. Auxiliary memory is O(N) stats plus tile scratch,
// independent of V. The per-position loss is -(z_target - m - log a), the
// log-space form of the streamed denominator.
template <typename T>
FusedOutput<T> fused_forward(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                             const TargetVector& targets, ReductionMode reduction,
                             MemoryLedger& ledger, const ExecPolicy& policy = {}) {
    const ProblemDims dims = validate_problem(hidden, weights, targets);
    FusedOutput<T> out;
    std::vector<T> losses;
    detail::forward_core(hidden, weights, targets, dims.v, policy.workers, policy, ledger,
                         out.stats, losses);
    out.loss = reduce_losses(std::move(losses), reduction, targets.count_valid());
    return out;
}

// Window-based variant: one stats partial per vocabulary window, reduced in
// ascending window order. Identical contract to fused_forward; with
// window_size == V the two are bitwise identical on a fixed schedule.
template <typename T>
FusedOutput<T> fused_forward_windowed(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                                      const TargetVector& targets, ReductionMode reduction,
                                      const WindowConfig& cfg, MemoryLedger& ledger,
                                      const ExecPolicy& policy = {}) {
    if (cfg.window_size == 0) {
        throw InvalidLayout("window size must be at least 1");
    }
    if (cfg.worker_count == 0) {
        throw InvalidLayout("worker count must be at least 1");
    }
    const ProblemDims dims = validate_problem(hidden, weights, targets);
    FusedOutput<T> out;
    std::vector<T> losses;
    detail::forward_core(hidden, weights, targets, std::min(cfg.window_size, dims.v),
                         cfg.worker_count, policy, ledger, out.stats, losses);
    out.loss = reduce_losses(std::move(losses), reduction, targets.count_valid());
    return out;
}

}  // namespace fusedce
