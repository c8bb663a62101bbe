#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/errors.hpp"

namespace fusedce {

enum class ReductionMode { Mean, Sum, None };

inline std::string reduction_name(ReductionMode mode) {
    switch (mode) {
        case ReductionMode::Mean: return "mean";
        case ReductionMode::Sum: return "sum";
        case ReductionMode::None: return "none";
    }
    return "?";
}

// Reduced scalar for Mean/Sum, per-position vector for None. Exactly one
// side is populated.
template <typename T>
struct LossValue {
    std::optional<T> reduced;
    std::optional<std::vector<T>> per_position;

    T scalar() const { return *reduced; }
    const std::vector<T>& vector() const { return *per_position; }
};

// Sequential reduction in ascending position order; ignored positions hold
// a zero entry in per_position and are excluded from the Mean denominator.
// Mean over zero valid positions is defined as 0.
template <typename T>
LossValue<T> reduce_losses(std::vector<T> per_position, ReductionMode mode,
                           std::size_t valid_count) {
    LossValue<T> out;
    if (mode == ReductionMode::None) {
        out.per_position = std::move(per_position);
        return out;
    }
    T sum = T{0};
    for (const T& x : per_position) {
        sum += x;
    }
    if (mode == ReductionMode::Mean) {
        sum = valid_count > 0 ? sum / static_cast<T>(valid_count) : T{0};
    }
    out.reduced = sum;
    return out;
}

template <typename T>
struct UpstreamGradient {
    enum class Kind { Scalar, PerPosition };

    Kind kind = Kind::Scalar;
    T scalar = T{1};
    std::vector<T> vector;

    static UpstreamGradient make_scalar(T value) {
        UpstreamGradient g;
        g.kind = Kind::Scalar;
        g.scalar = value;
        return g;
    }

    static UpstreamGradient make_per_position(std::vector<T> values) {
        UpstreamGradient g;
        g.kind = Kind::PerPosition;
        g.vector = std::move(values);
        return g;
    }
};

// Scalar upstream covers Mean (gamma / N_valid) and Sum (gamma); a
// per-position upstream is only meaningful when the forward used None.
template <typename T>
void check_upstream(const UpstreamGradient<T>& upstream, ReductionMode reduction,
                    std::size_t positions) {
    using Kind = typename UpstreamGradient<T>::Kind;
    if (reduction == ReductionMode::None) {
        if (upstream.kind != Kind::PerPosition) {
            throw InconsistentUpstream("reduction none requires a per-position upstream gradient");
        }
        if (upstream.vector.size() != positions) {
            throw InconsistentUpstream("upstream vector length " +
                                       std::to_string(upstream.vector.size()) + " != positions " +
                                       std::to_string(positions));
        }
    } else if (upstream.kind != Kind::Scalar) {
        throw InconsistentUpstream("scalar reductions require a scalar upstream gradient");
    }
}

// Effective scalar folding the Mean 1/N_valid factor into gamma. All-ignored
// Mean instances get 0, which zeroes the gradients instead of dividing by 0.
template <typename T>
T effective_scalar_upstream(T gamma, ReductionMode reduction, std::size_t valid_count) {
    if (reduction == ReductionMode::Mean) {
        return valid_count > 0 ? gamma / static_cast<T>(valid_count) : T{0};
    }
    return gamma;
}

// Per-position effective upstream factors.
template <typename T>
std::vector<T> effective_upstream(const UpstreamGradient<T>& upstream, ReductionMode reduction,
                                  const TargetVector& targets) {
    check_upstream(upstream, reduction, targets.size());
    std::vector<T> gamma(targets.size(), T{0});
    if (reduction == ReductionMode::None) {
        for (std::size_t n = 0; n < targets.size(); ++n) {
            gamma[n] = targets.is_ignored(n) ? T{0} : upstream.vector[n];
        }
        return gamma;
    }
    const T g = effective_scalar_upstream(upstream.scalar, reduction, targets.count_valid());
    for (std::size_t n = 0; n < targets.size(); ++n) {
        gamma[n] = targets.is_ignored(n) ? T{0} : g;
    }
    return gamma;
}

}  // namespace fusedce
