#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/errors.hpp"

namespace fusedce {

// splitmix64: tiny, seedable, identical on every platform. Used instead of
// <random> engines so generated instances (and therefore benchmark losses)
// are stable across standard libraries.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Uniform in [0, 1) with 53 random bits.
inline double splitmix_unit(std::uint64_t& state) noexcept {
    return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

template <typename T>
struct Instance {
    DenseMatrix<T> hidden;
    DenseMatrix<T> weights;
    TargetVector targets;
};

// Deterministic random instance: H and W uniform in [-1/sqrt(d), 1/sqrt(d)]
// (logit magnitudes stay O(1), so f32 paths are well-conditioned), targets
// uniform over [0, V). Substreams for H, W and Y are decorrelated so the
// same seed never aliases weight and hidden values.
template <typename T>
Instance<T> make_random_instance(std::size_t n, std::size_t d, std::size_t v,
                                 std::uint64_t seed) {
    if (n == 0 || d == 0 || v == 0) {
        throw EmptyInput("instance requires N > 0, d > 0, V > 0");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Instance<T> inst;
    inst.hidden = DenseMatrix<T>(n, d);
    inst.weights = DenseMatrix<T>(v, d);

    std::uint64_t hs = seed;
    for (T& x : inst.hidden.storage()) {
        x = static_cast<T>((2.0 * splitmix_unit(hs) - 1.0) * scale);
    }
    std::uint64_t ws = seed ^ 0xA5A5A5A5A5A5A5A5ull;
    for (T& x : inst.weights.storage()) {
        x = static_cast<T>((2.0 * splitmix_unit(ws) - 1.0) * scale);
    }

    std::uint64_t ts = seed ^ 0x5A5A5A5A5A5A5A5Aull;
    std::vector<std::int64_t> y(n);
    for (std::int64_t& t : y) {
        t = static_cast<std::int64_t>(splitmix64(ts) % static_cast<std::uint64_t>(v));
    }
    inst.targets = TargetVector(std::move(y));
    return inst;
}

// Same distribution with a fraction of positions replaced by the ignore
// sentinel (drawn from the target substream, so adding ignores does not
// reshuffle H or W).
template <typename T>
Instance<T> make_random_instance_with_ignores(std::size_t n, std::size_t d, std::size_t v,
                                              std::uint64_t seed, std::int64_t ignore_index,
                                              double ignore_fraction) {
    Instance<T> inst = make_random_instance<T>(n, d, v, seed);
    std::uint64_t is = seed ^ 0x3C3C3C3C3C3C3C3Cull;
    std::vector<std::int64_t> y = inst.targets.values();
    for (std::int64_t& t : y) {
        if (splitmix_unit(is) < ignore_fraction) {
            t = ignore_index;
        }
    }
    inst.targets = TargetVector(std::move(y), ignore_index);
    return inst;
}

}  // namespace fusedce
