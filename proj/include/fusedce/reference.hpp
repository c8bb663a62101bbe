#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/detail/kernels.hpp"
#include "fusedce/exec.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/reduction.hpp"

namespace fusedce {

// Canonical two-stage pipeline: materialize Z = H W^T, then safe-softmax
// cross-entropy over the explicit logits. This is the oracle the fused
// operator is held against and the memory baseline; it optimizes for
// obviousness, not speed.

// Stage 1: full logit matrix, N x V, charged to the ledger for its
// construction (the buffer whose absence the fused path is about). Uses the
// same blocked dot product as the fused path, so individual logits agree
// bitwise between pipelines.
template <typename T>
DenseMatrix<T> project_logits(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                              MemoryLedger& ledger, const ExecPolicy& policy = {}) {
    if (hidden.rows == 0 || hidden.cols == 0 || weights.rows == 0) {
        throw EmptyInput("projection requires N > 0, d > 0, V > 0");
    }
    if (hidden.cols != weights.cols) {
        throw DimensionMismatch("hidden cols " + std::to_string(hidden.cols) +
                                " != weight cols " + std::to_string(weights.cols));
    }
    const std::size_t n = hidden.rows;
    const std::size_t vocab = weights.rows;
    const std::size_t d = hidden.cols;

    ScopedCharge z_charge(ledger, n * vocab * sizeof(T));
    DenseMatrix<T> logits(n, vocab);
    const std::size_t tile = std::max<std::size_t>(policy.vocab_tile, 1);
    for (std::size_t vt = 0; vt < vocab; vt += tile) {
        const std::size_t vt_hi = std::min(vt + tile, vocab);
        for (std::size_t i = 0; i < n; ++i) {
            const T* h = hidden.row(i);
            T* out = logits.row(i);
            for (std::size_t v = vt; v < vt_hi; ++v) {
                out[v] = detail::dot(h, weights.row(v), d, policy.d_tile);
            }
        }
    }
    return logits;
}

// Stage 2: per-position loss (m - z_target) + log sum exp(z - m) from
// explicit logits, row maximum subtracted before exponentiation.
template <typename T>
LossValue<T> ce_loss_from_logits(const MatrixView<T>& logits, const TargetVector& targets,
                                 ReductionMode reduction) {
    if (logits.rows != targets.size()) {
        throw DimensionMismatch("logit rows " + std::to_string(logits.rows) +
                                " != target count " + std::to_string(targets.size()));
    }
    const std::size_t n = logits.rows;
    const std::size_t vocab = logits.cols;
    std::vector<T> losses(n, T{0});
    for (std::size_t i = 0; i < n; ++i) {
        if (targets.is_ignored(i)) {
            continue;
        }
        const std::int64_t t = targets[i];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw TargetOutOfRange("target " + std::to_string(t) + " at position " +
                                   std::to_string(i) + " outside [0, " + std::to_string(vocab) +
                                   ")");
        }
        const T* z = logits.row(i);
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t v = 0; v < vocab; ++v) {
            m = std::max(m, z[v]);
        }
        T a = T{0};
        for (std::size_t v = 0; v < vocab; ++v) {
            a += std::exp(z[v] - m);
        }
        losses[i] = (m - z[static_cast<std::size_t>(t)]) + std::log(a);
    }
    return reduce_losses(std::move(losses), reduction, targets.count_valid());
}

// Explicit backward: materializes the logits, rewrites them in place row by
// row into the upstream-scaled gradient G with G[n][v] = gamma_n *
// (P[n][v] - 1[v == y_n]), then accumulates dH = G W and dW = G^T H. The
// deliberate N x V materialization is the memory baseline.
template <typename T>
Gradients<T> reference_backward(const MatrixView<T>& hidden, const MatrixView<T>& weights,
                                const TargetVector& targets, const UpstreamGradient<T>& upstream,
                                ReductionMode reduction, MemoryLedger& ledger,
                                const ExecPolicy& policy = {}) {
    const ProblemDims dims = validate_problem(hidden, weights, targets);

    ScopedCharge gamma_charge(ledger, dims.n * sizeof(T));
    const std::vector<T> gamma = effective_upstream(upstream, reduction, targets);

    // Z, P and G share one buffer; only the current row is ever in a mixed
    // state.
    ScopedCharge z_charge(ledger, dims.n * dims.v * sizeof(T));
    DenseMatrix<T> work(dims.n, dims.v);
    const std::size_t tile = std::max<std::size_t>(policy.vocab_tile, 1);
    for (std::size_t vt = 0; vt < dims.v; vt += tile) {
        const std::size_t vt_hi = std::min(vt + tile, dims.v);
        for (std::size_t i = 0; i < dims.n; ++i) {
            const T* h = hidden.row(i);
            T* out = work.row(i);
            for (std::size_t v = vt; v < vt_hi; ++v) {
                out[v] = detail::dot(h, weights.row(v), dims.d, policy.d_tile);
            }
        }
    }

    for (std::size_t i = 0; i < dims.n; ++i) {
        T* z = work.row(i);
        if (targets.is_ignored(i)) {
            std::fill(z, z + dims.v, T{0});
            continue;
        }
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t v = 0; v < dims.v; ++v) {
            m = std::max(m, z[v]);
        }
        T a = T{0};
        for (std::size_t v = 0; v < dims.v; ++v) {
            a += std::exp(z[v] - m);
        }
        const T g = gamma[i];
        const std::size_t y = static_cast<std::size_t>(targets[i]);
        for (std::size_t v = 0; v < dims.v; ++v) {
            const T p = std::exp(z[v] - m) / a;
            z[v] = g * (p - (v == y ? T{1} : T{0}));
        }
    }

    ScopedCharge grad_charge(ledger, (dims.n + dims.v) * dims.d * sizeof(T));
    Gradients<T> grads{DenseMatrix<T>(dims.n, dims.d), DenseMatrix<T>(dims.v, dims.d)};
    for (std::size_t vt = 0; vt < dims.v; vt += tile) {
        const std::size_t vt_hi = std::min(vt + tile, dims.v);
        for (std::size_t i = 0; i < dims.n; ++i) {
            const T* g_row = work.row(i);
            const T* h = hidden.row(i);
            T* dh = grads.hidden.row(i);
            for (std::size_t v = vt; v < vt_hi; ++v) {
                const T g = g_row[v];
                detail::axpy(g, weights.row(v), dh, dims.d);
                detail::axpy(g, h, grads.weights.row(v), dims.d);
            }
        }
    }
    return grads;
}

}  // namespace fusedce
