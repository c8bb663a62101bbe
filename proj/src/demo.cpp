#include "fusedce/demo.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "fusedce/detail/kernels.hpp"
#include "fusedce/fused_backward.hpp"
#include "fusedce/fused_forward.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/softmax_stats.hpp"

namespace fusedce::demo {
namespace {

std::string num(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", x);
    return buf;
}

}  // namespace

void run(const DenseMatrix<double>& hidden, const DenseMatrix<double>& weights,
         const TargetVector& targets, ReductionMode reduction, std::ostream& out) {
    if (hidden.rows() > kMaxPositions || weights.rows() > kMaxVocab ||
        hidden.cols() > kMaxHidden) {
        throw InvalidLayout("demo caps are N <= " + std::to_string(kMaxPositions) + ", V <= " +
                            std::to_string(kMaxVocab) + ", d <= " + std::to_string(kMaxHidden));
    }
    const MatrixView<double> hv(hidden);
    const MatrixView<double> wv(weights);
    const ProblemDims dims = validate_problem(hv, wv, targets);

    out << "problem: N=" << dims.n << " d=" << dims.d << " V=" << dims.v
        << " reduction=" << reduction_name(reduction) << "\n\n";

    // Walk the streaming recurrence for position 0 one vocabulary entry at
    // a time, printing the running (m, a) after each logit.
    out << "position 0 stream (target=" << targets[0]
        << (targets.is_ignored(0) ? ", ignored" : "") << "):\n";
    out << "  v        z            m            a\n";
    SoftmaxStats<double> s;
    for (std::size_t v = 0; v < dims.v; ++v) {
        const double z = detail::dot(hv.row(0), wv.row(v), dims.d, dims.d);
        s.update(z);
        if (!targets.is_ignored(0) && static_cast<std::int64_t>(v) == targets[0]) {
            s.update_target(z);
        }
        out << "  " << v << "  " << num(z) << "  " << num(s.m) << "  " << num(s.a) << "\n";
    }
    out << "  => logsumexp=" << num(s.logsumexp())
        << " loss=" << num(targets.is_ignored(0) ? 0.0 : s.loss()) << "\n\n";

    MemoryLedger ledger;
    const FusedOutput<double> fwd = fused_forward(hv, wv, targets, ReductionMode::None, ledger);
    out << "per-position losses:\n";
    for (std::size_t n = 0; n < dims.n; ++n) {
        out << "  n=" << n << " loss=" << num(fwd.loss.vector()[n])
            << (targets.is_ignored(n) ? " (ignored)" : "") << "\n";
    }
    const LossValue<double> reduced =
        reduce_losses<double>(fwd.loss.vector(), reduction, targets.count_valid());
    if (reduction == ReductionMode::None) {
        out << "reduced loss: none (per-position values above)\n\n";
    } else {
        out << "reduced loss (" << reduction_name(reduction) << "): " << num(reduced.scalar())
            << "\n\n";
    }

    // Gradient terms for position 0 under unit upstream: p_v from the
    // cached stats, g_v = gamma * (p_v - [v == y]).
    const auto unit_upstream =
        reduction == ReductionMode::None
            ? UpstreamGradient<double>::make_per_position(std::vector<double>(dims.n, 1.0))
            : UpstreamGradient<double>::make_scalar(1.0);
    const std::vector<double> gamma = effective_upstream(unit_upstream, reduction, targets);
    out << "position 0 gradient terms (gamma=" << num(gamma[0]) << "):\n";
    out << "  v        p            g\n";
    for (std::size_t v = 0; v < dims.v; ++v) {
        const double z = detail::dot(hv.row(0), wv.row(v), dims.d, dims.d);
        const double p = s.a > 0.0 ? std::exp(z - s.m) / s.a : 0.0;
        const bool is_target = !targets.is_ignored(0) && static_cast<std::int64_t>(v) == targets[0];
        const double g = targets.is_ignored(0) ? 0.0 : gamma[0] * (p - (is_target ? 1.0 : 0.0));
        out << "  " << v << "  " << num(p) << "  " << num(g) << "\n";
    }
    out << "\nledger: peak=" << ledger.peak_bytes() << " bytes, current=" << ledger.current_bytes()
        << " bytes\n";
}

}  // namespace fusedce::demo
