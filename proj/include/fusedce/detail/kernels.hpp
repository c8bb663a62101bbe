#pragma once

#include <cstddef>

namespace fusedce::detail {

// Fixed-order multi-accumulator dot product: two banks of 8 independent
// lanes, then a fixed horizontal reduction. The lane loops vectorize without
// -ffast-math and the summation order never depends on anything but the
// length, so results are bitwise reproducible.
template <typename T>
T dot_block(const T* a, const T* b, std::size_t n) noexcept {
    constexpr std::size_t kLanes = 8;
    T acc0[kLanes] = {};
    T acc1[kLanes] = {};
    std::size_t i = 0;
    for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
        for (std::size_t k = 0; k < kLanes; ++k) {
            acc0[k] += a[i + k] * b[i + k];
        }
        for (std::size_t k = 0; k < kLanes; ++k) {
            acc1[k] += a[i + kLanes + k] * b[i + kLanes + k];
        }
    }
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t k = 0; k < kLanes; ++k) {
            acc0[k] += a[i + k] * b[i + k];
        }
    }
    T tail = T{0};
    for (; i < n; ++i) {
        tail += a[i] * b[i];
    }
    for (std::size_t k = 0; k < kLanes; ++k) {
        acc0[k] += acc1[k];
    }
    T sum = T{0};
    for (std::size_t k = 0; k < kLanes; ++k) {
        sum += acc0[k];
    }
    return sum + tail;
}

// Dot product accumulated in ascending d_tile chunks. Every code path that
// computes a logit goes through here with the same d_tile, so the same
// (h, w) pair always yields the same bits.
template <typename T>
T dot(const T* a, const T* b, std::size_t n, std::size_t d_tile) noexcept {
    if (n <= d_tile) {
        return dot_block(a, b, n);
    }
    T total = T{0};
    std::size_t base = 0;
    for (; base + d_tile <= n; base += d_tile) {
        total += dot_block(a + base, b + base, d_tile);
    }
    if (base < n) {
        total += dot_block(a + base, b + base, n - base);
    }
    return total;
}

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) noexcept {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

}  // namespace fusedce::detail
