#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/exec.hpp"
#include "fusedce/fused_backward.hpp"
#include "fusedce/fused_forward.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/reduction.hpp"
#include "fusedce/softmax_stats.hpp"

namespace fusedce {

// Single-process simulation of the three parallel execution schemes. Ranks
// run sequentially in rank order and exchange immutable partials, so every
// run is deterministic for a fixed layout.
enum class ParallelMode { DataParallel, TensorParallel, SequenceParallel };

struct ShardRange {
    std::size_t lo = 0;
    std::size_t hi = 0;

    std::size_t size() const noexcept { return hi - lo; }
};

// Contiguous partition of one axis across ranks: the vocabulary for TP,
// positions for SP, micro-batches of the global batch for DP.
struct ShardLayout {
    ParallelMode mode = ParallelMode::TensorParallel;
    std::vector<ShardRange> ranges;

    std::size_t rank_count() const noexcept { return ranges.size(); }

    static ShardLayout make(ParallelMode mode, std::size_t axis, std::size_t ranks) {
        if (ranks == 0) {
            throw InvalidLayout("rank count must be at least 1");
        }
        if (axis < ranks) {
            throw InvalidLayout("cannot split axis of length " + std::to_string(axis) +
                                " across " + std::to_string(ranks) + " ranks");
        }
        ShardLayout layout;
        layout.mode = mode;
        for (const auto& [lo, hi] : partition_ranges(axis, ranks)) {
            layout.ranges.push_back(ShardRange{lo, hi});
        }
        return layout;
    }

    static ShardLayout tensor_parallel(std::size_t vocab, std::size_t ranks) {
        return make(ParallelMode::TensorParallel, vocab, ranks);
    }
    static ShardLayout sequence_parallel(std::size_t positions, std::size_t ranks) {
        return make(ParallelMode::SequenceParallel, positions, ranks);
    }
    static ShardLayout data_parallel(std::size_t positions, std::size_t ranks) {
        if (ranks != 0 && positions % ranks != 0) {
            throw InvalidLayout("data parallelism needs equal micro-batches: " +
                                std::to_string(positions) + " positions across " +
                                std::to_string(ranks) + " ranks");
        }
        return make(ParallelMode::DataParallel, positions, ranks);
    }
};

// One rank's slice of the weight matrix: rows [v_offset, v_offset + rows).
template <typename T>
struct WeightShard {
    MatrixView<T> view;
    std::size_t v_offset = 0;
};

template <typename T>
std::vector<WeightShard<T>> shard_weights(const MatrixView<T>& weights,
                                          const ShardLayout& layout) {
    if (layout.mode != ParallelMode::TensorParallel) {
        throw InvalidLayout("weight sharding requires a tensor-parallel layout");
    }
    if (layout.ranges.empty() || layout.ranges.back().hi != weights.rows) {
        throw InvalidLayout("layout does not cover the vocabulary");
    }
    std::vector<WeightShard<T>> shards;
    shards.reserve(layout.ranges.size());
    for (const ShardRange& r : layout.ranges) {
        shards.push_back(WeightShard<T>{weights.rows_slice(r.lo, r.hi), r.lo});
    }
    return shards;
}

// Position-axis slices of H (SP) or replica micro-batches (DP).
template <typename T>
std::vector<MatrixView<T>> shard_positions(const MatrixView<T>& hidden,
                                           const ShardLayout& layout) {
    if (layout.mode == ParallelMode::TensorParallel) {
        throw InvalidLayout("position sharding requires an SP or DP layout");
    }
    if (layout.ranges.empty() || layout.ranges.back().hi != hidden.rows) {
        throw InvalidLayout("layout does not cover the positions");
    }
    std::vector<MatrixView<T>> shards;
    shards.reserve(layout.ranges.size());
    for (const ShardRange& r : layout.ranges) {
        shards.push_back(hidden.rows_slice(r.lo, r.hi));
    }
    return shards;
}

inline std::vector<TargetVector> shard_targets(const TargetVector& targets,
                                               const ShardLayout& layout) {
    if (layout.mode == ParallelMode::TensorParallel) {
        throw InvalidLayout("target sharding requires an SP or DP layout");
    }
    if (layout.ranges.empty() || layout.ranges.back().hi != targets.size()) {
        throw InvalidLayout("layout does not cover the positions");
    }
    std::vector<TargetVector> shards;
    shards.reserve(layout.ranges.size());
    for (const ShardRange& r : layout.ranges) {
        std::vector<std::int64_t> slice(targets.values().begin() + static_cast<std::ptrdiff_t>(r.lo),
                                        targets.values().begin() + static_cast<std::ptrdiff_t>(r.hi));
        shards.emplace_back(std::move(slice), targets.ignore_index());
    }
    return shards;
}

namespace detail {

// Shards must tile [0, V) contiguously in rank order with a consistent
// hidden width. Returns the global vocabulary size.
template <typename T>
std::size_t validate_weight_shards(const std::vector<WeightShard<T>>& shards, std::size_t d) {
    if (shards.empty()) {
        throw InvalidLayout("no weight shards");
    }
    std::size_t next = 0;
    for (const WeightShard<T>& s : shards) {
        if (s.view.cols != d) {
            throw InvalidLayout("weight shard width " + std::to_string(s.view.cols) +
                                " != hidden width " + std::to_string(d));
        }
        if (s.v_offset != next || s.view.rows == 0) {
            throw InvalidLayout("weight shards must tile the vocabulary contiguously");
        }
        next += s.view.rows;
    }
    return next;
}

}  // namespace detail

// The message one TP rank emits after its forward map step: stats over its
// own vocabulary shard, target captured only if it fell in the shard.
template <typename T>
struct RankPartial {
    std::size_t rank = 0;
    std::size_t v_offset = 0;
    std::vector<SoftmaxStats<T>> stats;
};

template <typename T>
RankPartial<T> tp_rank_partial(std::size_t rank, const MatrixView<T>& hidden,
                               const WeightShard<T>& shard, const TargetVector& targets,
                               const ExecPolicy& policy = {}) {
    if (hidden.rows != targets.size()) {
        throw DimensionMismatch("hidden rows " + std::to_string(hidden.rows) +
                                " != target count " + std::to_string(targets.size()));
    }
    RankPartial<T> out;
    out.rank = rank;
    out.v_offset = shard.v_offset;
    out.stats.assign(hidden.rows, SoftmaxStats<T>{});
    const std::vector<std::int64_t> track = detail::tracking_from_targets(targets);
    detail::accumulate_stats_block(hidden, shard.view, shard.v_offset, 0, shard.view.rows, 0,
                                   hidden.rows, track.data(), policy, out.stats.data());
    return out;
}

// Tensor-parallel forward: every rank streams its vocabulary shard over the
// full batch, partials merge in rank order. No rank-sized buffer ever grows
// with the global V; one in-flight partial exists at a time.
template <typename T>
FusedOutput<T> tp_forward(const MatrixView<T>& hidden, const std::vector<WeightShard<T>>& shards,
                          const TargetVector& targets, ReductionMode reduction,
                          MemoryLedger& ledger, const ExecPolicy& policy = {}) {
    const std::size_t vocab = detail::validate_weight_shards(shards, hidden.cols);
    if (hidden.rows == 0 || hidden.cols == 0) {
        throw EmptyInput("tp forward requires N > 0 and d > 0");
    }
    if (hidden.rows != targets.size()) {
        throw DimensionMismatch("hidden rows " + std::to_string(hidden.rows) +
                                " != target count " + std::to_string(targets.size()));
    }
    for (std::size_t n = 0; n < targets.size(); ++n) {
        if (!targets.is_ignored(n) &&
            (targets[n] < 0 || static_cast<std::size_t>(targets[n]) >= vocab)) {
            throw TargetOutOfRange("target " + std::to_string(targets[n]) + " at position " +
                                   std::to_string(n) + " outside [0, " + std::to_string(vocab) +
                                   ")");
        }
    }

    const std::size_t n = hidden.rows;
    FusedOutput<T> out;
    ScopedCharge merged_charge(ledger, n * sizeof(SoftmaxStats<T>));
    out.stats.assign(n, SoftmaxStats<T>{});

    // One in-flight rank partial at a time; nothing here scales with the
    // global V.
    for (std::size_t r = 0; r < shards.size(); ++r) {
        ScopedCharge rank_charge(ledger, n * sizeof(SoftmaxStats<T>));
        const RankPartial<T> partial = tp_rank_partial(r, hidden, shards[r], targets, policy);
        for (std::size_t i = 0; i < n; ++i) {
            out.stats[i] = merge_stats(out.stats[i], partial.stats[i]);
        }
    }

    ScopedCharge loss_charge(ledger, n * sizeof(T));
    std::vector<T> losses(n, T{0});
    for (std::size_t i = 0; i < n; ++i) {
        if (targets.is_ignored(i)) {
            continue;
        }
        if (!out.stats[i].target_found) {
            throw TargetOutOfRange("target for position " + std::to_string(i) +
                                   " not covered by any shard");
        }
        losses[i] = out.stats[i].loss();
    }
    out.loss = reduce_losses(std::move(losses), reduction, targets.count_valid());
    return out;
}

// Tensor-parallel backward results: a full dH (rank contributions summed in
// rank order) plus each rank's local dW shard, never concatenated.
template <typename T>
struct TpGradients {
    DenseMatrix<T> hidden;
    std::vector<DenseMatrix<T>> weight_shards;
};

template <typename T>
TpGradients<T> tp_backward(const MatrixView<T>& hidden, const std::vector<WeightShard<T>>& shards,
                           const TargetVector& targets, std::span<const SoftmaxStats<T>> stats,
                           const UpstreamGradient<T>& upstream, ReductionMode reduction,
                           MemoryLedger& ledger, const ExecPolicy& policy = {}) {
    detail::validate_weight_shards(shards, hidden.cols);
    if (hidden.rows != targets.size()) {
        throw DimensionMismatch("hidden rows " + std::to_string(hidden.rows) +
                                " != target count " + std::to_string(targets.size()));
    }
    detail::require_stats(targets, stats);

    const std::size_t n = hidden.rows;
    const std::size_t d = hidden.cols;

    ScopedCharge gamma_charge(ledger, n * sizeof(T));
    const std::vector<T> gamma = effective_upstream(upstream, reduction, targets);
    const std::vector<std::int64_t> track = detail::tracking_from_targets(targets);

    std::size_t total_vocab = 0;
    for (const WeightShard<T>& shard : shards) {
        total_vocab += shard.view.rows;
    }
    ScopedCharge grad_charge(ledger, (n + total_vocab) * d * sizeof(T));
    TpGradients<T> out;
    out.hidden = DenseMatrix<T>(n, d);
    out.weight_shards.reserve(shards.size());

    ScopedCharge dh_rank_charge(ledger, n * d * sizeof(T));
    DenseMatrix<T> dh_rank(n, d);
    for (const WeightShard<T>& shard : shards) {
        std::fill(dh_rank.storage().begin(), dh_rank.storage().end(), T{0});
        DenseMatrix<T> dw_local(shard.view.rows, d);
        detail::accumulate_grads_block(hidden, shard.view, shard.v_offset, 0, shard.view.rows, 0,
                                       n, track.data(), stats.data(), gamma.data(), policy,
                                       dh_rank.data(), dw_local.data());
        T* acc = out.hidden.data();
        const T* part = dh_rank.data();
        for (std::size_t i = 0; i < out.hidden.size(); ++i) {
            acc[i] += part[i];
        }
        out.weight_shards.push_back(std::move(dw_local));
    }
    return out;
}

// Sequence-parallel gather: concatenates position shards back into the full
// H before the vocabulary-parallel stage, mirroring the SP-to-TP switch.
template <typename T>
DenseMatrix<T> sp_to_tp_gather(const std::vector<MatrixView<T>>& hidden_shards) {
    if (hidden_shards.empty()) {
        throw InvalidLayout("no hidden shards to gather");
    }
    const std::size_t d = hidden_shards.front().cols;
    std::size_t total = 0;
    for (const MatrixView<T>& s : hidden_shards) {
        if (s.cols != d) {
            throw InvalidLayout("hidden shards disagree on width");
        }
        total += s.rows;
    }
    DenseMatrix<T> gathered(total, d);
    std::size_t row = 0;
    for (const MatrixView<T>& s : hidden_shards) {
        std::copy(s.data, s.data + s.rows * s.cols, gathered.row(row));
        row += s.rows;
    }
    return gathered;
}

// One data-parallel replica: a micro-batch of the global batch plus its
// targets. All replicas see the same (replicated) weights.
template <typename T>
struct DpReplica {
    MatrixView<T> hidden;
    TargetVector targets;
};

template <typename T>
struct DpResult {
    T loss = T{0};
    DenseMatrix<T> weight_grad;
};

// Data-parallel step: every replica runs the fused forward and backward on
// its micro-batch, then loss and dW synchronize as the mean over ranks (the
// usual all-reduce-average). Replica dH stays rank-local and is dropped.
// Micro-batches must have equal sizes; loss sync needs scalar reductions.
template <typename T>
DpResult<T> dp_step(const std::vector<DpReplica<T>>& replicas, const MatrixView<T>& weights,
                    ReductionMode reduction, MemoryLedger& ledger,
                    const ExecPolicy& policy = {}) {
    if (replicas.empty()) {
        throw InvalidLayout("no replicas");
    }
    if (reduction == ReductionMode::None) {
        throw UnsupportedReduction("data-parallel loss sync requires a scalar reduction");
    }
    const std::size_t micro = replicas.front().hidden.rows;
    for (const DpReplica<T>& r : replicas) {
        if (r.hidden.rows != micro || r.targets.size() != micro) {
            throw InvalidLayout("replica micro-batches must have equal sizes");
        }
    }

    const std::size_t ranks = replicas.size();
    DpResult<T> out;
    out.weight_grad = DenseMatrix<T>(weights.rows, weights.cols);

    T loss_sum = T{0};
    for (const DpReplica<T>& rep : replicas) {
        FusedOutput<T> fwd = fused_forward(rep.hidden, weights, rep.targets, reduction, ledger,
                                           policy);
        ScopedCharge stats_charge(ledger, fwd.stats.size() * sizeof(SoftmaxStats<T>));
        Gradients<T> grads = fused_backward_recompute(
            rep.hidden, weights, rep.targets, std::span<const SoftmaxStats<T>>(fwd.stats),
            UpstreamGradient<T>::make_scalar(T{1}), reduction, ledger, policy);
        ScopedCharge grads_charge(ledger, grads.hidden.bytes() + grads.weights.bytes());
        loss_sum += fwd.loss.scalar();
        T* acc = out.weight_grad.data();
        const T* part = grads.weights.data();
        for (std::size_t i = 0; i < out.weight_grad.size(); ++i) {
            acc[i] += part[i];
        }
    }

    const T inv = T{1} / static_cast<T>(ranks);
    out.loss = loss_sum * inv;
    for (T& x : out.weight_grad.storage()) {
        x *= inv;
    }
    return out;
}

}  // namespace fusedce
