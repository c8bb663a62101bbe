#pragma once

#include <iosfwd>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/reduction.hpp"

namespace fusedce::demo {

// Caps keeping the trace readable; exceeding them is a usage error.
inline constexpr std::size_t kMaxPositions = 8;
inline constexpr std::size_t kMaxVocab = 16;
inline constexpr std::size_t kMaxHidden = 8;

// Prints the streaming recurrence for position 0 line by line (one
// (v, z, m, a) row per vocabulary entry), the final stats and per-position
// losses, the reduced loss, and the per-v gradient terms p_v and g_v for
// position 0. Runs in double precision. Throws InvalidLayout when the dims
// exceed the caps (target validity comes from the usual checks).
void run(const DenseMatrix<double>& hidden, const DenseMatrix<double>& weights,
         const TargetVector& targets, ReductionMode reduction, std::ostream& out);

}  // namespace fusedce::demo
