#pragma once

// Independent implementations the tests check the library against. These
// deliberately avoid the library's kernels: plain loops, long double
// accumulation, and a from-scratch bf16 rounder.

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fusedce/dense_matrix.hpp"

namespace oracles {

// Triple-loop H (n x d) times W^T (v x d), single accumulator per output.
template <typename T>
fusedce::DenseMatrix<T> matmul_nt(const fusedce::DenseMatrix<T>& h,
                                  const fusedce::DenseMatrix<T>& w) {
    fusedce::DenseMatrix<T> z(h.rows(), w.rows());
    for (std::size_t n = 0; n < h.rows(); ++n) {
        for (std::size_t v = 0; v < w.rows(); ++v) {
            T acc = T{0};
            for (std::size_t k = 0; k < h.cols(); ++k) {
                acc += h.at(n, k) * w.at(v, k);
            }
            z.at(n, v) = acc;
        }
    }
    return z;
}

// Safe cross-entropy from explicit logits at long double precision. Ignored
// positions get 0. Returns per-position losses.
template <typename T>
std::vector<long double> safe_ce_long(const fusedce::DenseMatrix<T>& h,
                                      const fusedce::DenseMatrix<T>& w,
                                      const fusedce::TargetVector& y) {
    std::vector<long double> losses(h.rows(), 0.0L);
    for (std::size_t n = 0; n < h.rows(); ++n) {
        if (y.is_ignored(n)) {
            continue;
        }
        std::vector<long double> z(w.rows());
        for (std::size_t v = 0; v < w.rows(); ++v) {
            long double acc = 0.0L;
            for (std::size_t k = 0; k < h.cols(); ++k) {
                acc += static_cast<long double>(h.at(n, k)) * static_cast<long double>(w.at(v, k));
            }
            z[v] = acc;
        }
        long double m = z[0];
        for (long double zz : z) {
            m = std::max(m, zz);
        }
        long double a = 0.0L;
        for (long double zz : z) {
            a += std::exp(zz - m);
        }
        losses[n] = (m - z[static_cast<std::size_t>(y[n])]) + std::log(a);
    }
    return losses;
}

// The numerically unsafe formulation: exp without max subtraction. Used to
// show what the safe paths avoid.
template <typename T>
std::vector<T> unsafe_ce(const fusedce::DenseMatrix<T>& z, const fusedce::TargetVector& y) {
    std::vector<T> losses(z.rows(), T{0});
    for (std::size_t n = 0; n < z.rows(); ++n) {
        if (y.is_ignored(n)) {
            continue;
        }
        T a = T{0};
        for (std::size_t v = 0; v < z.cols(); ++v) {
            a += std::exp(z.at(n, v));
        }
        losses[n] = std::log(a) - z.at(n, static_cast<std::size_t>(y[n]));
    }
    return losses;
}

// Central finite difference of f at *x with step h, restoring *x.
template <typename T, typename F>
double central_fd(T* x, T h, F&& f) {
    const T saved = *x;
    *x = saved + h;
    const double up = static_cast<double>(f());
    *x = saved - h;
    const double down = static_cast<double>(f());
    *x = saved;
    return (up - down) / (2.0 * static_cast<double>(h));
}

// Bit-level bf16 rounding oracle, written against the IEEE-754 encoding
// directly: inspect the low 16 bits, truncate when below half, round up
// when above half, and round to even on an exact tie.
inline float bf16_oracle(float x) {
    if (std::isnan(x)) {
        return x;
    }
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
    const std::uint32_t low = bits & 0xFFFFu;
    std::uint32_t high = bits >> 16;
    if (low > 0x8000u) {
        high += 1;
    } else if (low == 0x8000u && (high & 1u) != 0) {
        high += 1;  // tie: round to even
    }
    return std::bit_cast<float>(high << 16);
}

}  // namespace oracles
