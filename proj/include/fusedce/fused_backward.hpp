#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/detail/kernels.hpp"
#include "fusedce/exec.hpp"
#include "fusedce/fused_forward.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/reduction.hpp"
#include "fusedce/softmax_stats.hpp"

namespace fusedce {

namespace detail {

// Backward streaming core: recomputes each logit from H and W, turns it
// into p = exp(z - m) / a using the cached stats, and accumulates
//   dH[n] += g * W[v]   and   dW[v] += g * H[n],
// g = (p - 1[v == target]) scaled by gamma[n] when gamma is non-null and
// left unscaled otherwise. dh is indexed by global position, dw by local
// weight row; both accumulate in a fixed ascending order.
template <typename T>
void accumulate_grads_block(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                            std::size_t v_offset, std::size_t v_lo, std::size_t v_hi,
                            std::size_t n_lo, std::size_t n_hi, const std::int64_t* track,
                            const SoftmaxStats<T>* stats, const T* gamma,
                            const ExecPolicy& policy, T* dh, T* dw) {
    const std::size_t d = hidden.cols;
    const std::size_t tile = std::max<std::size_t>(policy.vocab_tile, 1);
    for (std::size_t vt = v_lo; vt < v_hi; vt += tile) {
        const std::size_t vt_hi = std::min(vt + tile, v_hi);
        for (std::size_t n = n_lo; n < n_hi; ++n) {
            if (track[n] == kSkipPosition) {
                continue;
            }
            const T* h = hidden.row(n);
            T* dh_row = dh + n * d;
            const T m = stats[n].m;
            const T a = stats[n].a;
            const T scale = gamma ? gamma[n] : T{1};
            const std::int64_t want = track[n] - static_cast<std::int64_t>(v_offset);
            for (std::size_t v = vt; v < vt_hi; ++v) {
                const T z = dot(h, weights.row(v), d, policy.d_tile);
                const T p = std::exp(z - m) / a;
                const T g =
                    scale * (p - (static_cast<std::int64_t>(v) == want ? T{1} : T{0}));
                axpy(g, weights.row(v), dh_row, d);
                axpy(g, h, dw + v * d, d);
            }
        }
    }
}

template <typename T>
void require_stats(const TargetVector& targets, std::span<const SoftmaxStats<T>> stats) {
    if (stats.size() != targets.size()) {
        throw MissingStats("stats cache has " + std::to_string(stats.size()) + " entries for " +
                           std::to_string(targets.size()) + " positions");
    }
    for (std::size_t n = 0; n < targets.size(); ++n) {
        if (targets.is_ignored(n)) {
            continue;
        }
        if (!stats[n].target_found || !(stats[n].a > T{0})) {
            throw MissingStats("position " + std::to_string(n) +
                               " has no usable forward stats");
        }
    }
}

// Runs the gradient core across workers. Position ranges are disjoint so
// every worker writes its own dH rows; dW is racy, so worker 0 writes the
// output directly and each extra worker gets a private V x d partial,
// folded back in worker order. Results are bitwise reproducible for a
// fixed worker count.
template <typename T>
void run_grad_workers(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                      const std::vector<std::int64_t>& track, const SoftmaxStats<T>* stats,
                      const T* gamma, const ExecPolicy& policy, MemoryLedger& ledger,
                      DenseMatrix<T>& dh, DenseMatrix<T>& dw) {
    const std::size_t n = hidden.rows;
    const std::size_t vocab = weights.rows;
    const std::size_t d = hidden.cols;
    const std::size_t workers = std::max<std::size_t>(policy.workers, 1);

    const std::size_t extra = workers > 1 ? workers - 1 : 0;
    ScopedCharge partial_charge(ledger, extra * vocab * d * sizeof(T));
    std::vector<DenseMatrix<T>> partials;
    partials.reserve(extra);
    for (std::size_t w = 0; w < extra; ++w) {
        partials.emplace_back(vocab, d);
    }

    for_each_range(n, workers, [&](std::size_t w, std::size_t lo, std::size_t hi) {
        T* dw_out = w == 0 ? dw.data() : partials[w - 1].data();
        accumulate_grads_block(hidden, weights, 0, 0, vocab, lo, hi, track.data(), stats, gamma,
                               policy, dh.data(), dw_out);
    });

    for (std::size_t w = 0; w < extra; ++w) {
        T* out = dw.data();
        const T* part = partials[w].data();
        for (std::size_t i = 0; i < dw.size(); ++i) {
            out[i] += part[i];
        }
    }
}

}  // namespace detail

// Backward from cached stats, recomputing logits on the fly (no N x V
// buffer at any point). Supports every reduction; reduction none requires
// a per-position upstream gradient.
template <typename T>
Gradients<T> fused_backward_recompute(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                                      const TargetVector& targets,
                                      std::span<const SoftmaxStats<T>> stats,
                                      const UpstreamGradient<T>& upstream,
                                      ReductionMode reduction, MemoryLedger& ledger,
                                      const ExecPolicy& policy = {}) {
    const ProblemDims dims = validate_problem(hidden, weights, targets);
    detail::require_stats(targets, stats);

    ScopedCharge gamma_charge(ledger, dims.n * sizeof(T));
    const std::vector<T> gamma = effective_upstream(upstream, reduction, targets);
    const std::vector<std::int64_t> track = detail::tracking_from_targets(targets);

    // The gradient buffers count while this pass builds them: the V x d
    // term is exactly what separates backward from the forward-only O(N)
    // footprint.
    ScopedCharge grad_charge(ledger, (dims.n + dims.v) * dims.d * sizeof(T));
    Gradients<T> grads{DenseMatrix<T>(dims.n, dims.d), DenseMatrix<T>(dims.v, dims.d)};
    detail::run_grad_workers(hidden, weights, track, stats.data(), gamma.data(), policy, ledger,
                             grads.hidden, grads.weights);
    return grads;
}

// Unscaled partial gradients dH' and dW': the (P - onehot) contractions
// with the upstream factor deliberately left out.
template <typename T>
struct PartialGradients {
    DenseMatrix<T> hidden;
    DenseMatrix<T> weights;
};

template <typename T>
struct PartialGradOutput {
    LossValue<T> loss;
    std::vector<SoftmaxStats<T>> stats;
    PartialGradients<T> partials;
};

// Forward pass that additionally accumulates unscaled partial gradients,
// for callers that learn the scalar upstream factor only after the fact.
// The loss and stats are bitwise identical to fused_forward on the same
// policy. Only scalar-upstream reductions are supported: a per-position
// upstream cannot be folded in afterwards by one scalar multiply.
template <typename T>
PartialGradOutput<T> fused_forward_with_partial_grads(const MatrixView<T>& hidden,
                                                      const MatrixView<T>& weights,
                                                      const TargetVector& targets,
                                                      ReductionMode reduction,
                                                      MemoryLedger& ledger,
                                                      const ExecPolicy& policy = {}) {
    if (reduction == ReductionMode::None) {
        throw UnsupportedReduction(
            "partial-gradient accumulation requires a scalar-upstream reduction (mean or sum)");
    }
    const ProblemDims dims = validate_problem(hidden, weights, targets);

    PartialGradOutput<T> out;
    std::vector<T> losses;
    detail::forward_core(hidden, weights, targets, dims.v, policy.workers, policy, ledger,
                         out.stats, losses);
    out.loss = reduce_losses(std::move(losses), reduction, targets.count_valid());

    const std::vector<std::int64_t> track = detail::tracking_from_targets(targets);
    ScopedCharge grad_charge(ledger, (dims.n + dims.v) * dims.d * sizeof(T));
    out.partials.hidden = DenseMatrix<T>(dims.n, dims.d);
    out.partials.weights = DenseMatrix<T>(dims.v, dims.d);
    detail::run_grad_workers(hidden, weights, track, out.stats.data(), static_cast<const T*>(nullptr),
                             policy, ledger, out.partials.hidden, out.partials.weights);
    return out;
}

// Deferred rescale: grads = gamma_eff * partials, one scalar multiply per
// element. gamma_eff already contains any mean normalization (see
// effective_scalar_upstream).
template <typename T>
Gradients<T> scale_partial_grads(PartialGradients<T> partials, T gamma_eff) {
    for (T& x : partials.hidden.storage()) {
        x *= gamma_eff;
    }
    for (T& x : partials.weights.storage()) {
        x *= gamma_eff;
    }
    return Gradients<T>{std::move(partials.hidden), std::move(partials.weights)};
}

}  // namespace fusedce
