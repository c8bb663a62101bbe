#pragma once

#include <cmath>
#include <limits>

#include "fusedce/errors.hpp"

namespace fusedce {

// Streaming safe-softmax state for one position: running maximum m and
// accumulator a with (m, a) jointly encoding logsumexp = m + log a, plus
// the separately tracked target logit. The default-constructed value is
// the merge identity (m = -inf, a = 0, no target).
template <typename T>
struct SoftmaxStats {
    T m = -std::numeric_limits<T>::infinity();
    T a = T{0};
    T z_target = T{0};
    bool target_found = false;

    // Online update with one logit. On the first update exp(m - z)
    // evaluates to exp(-inf) = 0, so a starts at 1 as it should.
    void update(T z) noexcept {
        if (z > m) {
            a = a * std::exp(m - z) + T{1};
            m = z;
        } else {
            a += std::exp(z - m);
        }
    }

    void update_target(T z) noexcept {
        z_target = z;
        target_found = true;
    }

    bool empty() const noexcept { return a == T{0} && !target_found; }

    T logsumexp() const noexcept { return m + std::log(a); }

    // Per-position loss, -(z_target - logsumexp). Requires target_found.
    // Evaluated as (m - z_target) + log a: when all logits share a large
    // offset it cancels exactly in m - z_target instead of polluting the
    // low bits of m + log a.
    T loss() const noexcept { return (m - z_target) + std::log(a); }
};

// Epilogue combine for window/shard partials: new maximum, rescaled sums.
// Associative and commutative up to rounding; the identity element is the
// default-constructed stats. A zero accumulator contributes nothing even
// when its m is -inf, which keeps exp(-inf - -inf) = NaN out of the sum.
template <typename T>
SoftmaxStats<T> merge_stats(const SoftmaxStats<T>& s1, const SoftmaxStats<T>& s2) {
    if (s1.target_found && s2.target_found) {
        throw DuplicateTarget("both stats claim the target logit");
    }
    SoftmaxStats<T> out;
    out.m = s1.m > s2.m ? s1.m : s2.m;
    T a = T{0};
    if (s1.a != T{0}) {
        a += s1.a * std::exp(s1.m - out.m);
    }
    if (s2.a != T{0}) {
        a += s2.a * std::exp(s2.m - out.m);
    }
    out.a = a;
    if (s1.target_found) {
        out.z_target = s1.z_target;
        out.target_found = true;
    } else if (s2.target_found) {
        out.z_target = s2.z_target;
        out.target_found = true;
    }
    return out;
}

}  // namespace fusedce
