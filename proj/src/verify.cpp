#include "fusedce/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "fusedce/fused_backward.hpp"
#include "fusedce/fused_forward.hpp"
#include "fusedce/instance.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/reference.hpp"

namespace fusedce::verify {
namespace {

double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-300});
    return std::fabs(a - b) / denom;
}

// Gradient metric with a unit floor: near-zero elements are compared
// absolutely, O(1) elements relatively.
double grad_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1.0});
}

bool is_f64(const VerifyConfig& cfg) {
    return cfg.precision.compute == ComputePrecision::F64;
}

bool is_bf16(const VerifyConfig& cfg) {
    return cfg.precision.storage == StoragePrecision::Bf16Emulated;
}

double pick_tol(const VerifyConfig& cfg, double f32_tol, double f64_tol) {
    return is_f64(cfg) ? f64_tol : f32_tol;
}

template <typename T>
Instance<T> gen_instance(std::size_t n, std::size_t d, std::size_t v, std::uint64_t seed,
                         bool bf16, bool with_ignores) {
    Instance<T> inst = with_ignores
                           ? make_random_instance_with_ignores<T>(n, d, v, seed, -100, 0.25)
                           : make_random_instance<T>(n, d, v, seed);
    if (bf16) {
        inst.hidden.round_to_bf16();
        inst.weights.round_to_bf16();
    }
    return inst;
}

ReductionMode cycle_reduction(std::size_t i) {
    switch (i % 3) {
        case 0: return ReductionMode::Mean;
        case 1: return ReductionMode::Sum;
        default: return ReductionMode::None;
    }
}

template <typename T>
double max_grad_err(const Gradients<T>& a, const Gradients<T>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.hidden.size(); ++i) {
        worst = std::max(worst, grad_err(a.hidden.data()[i], b.hidden.data()[i]));
    }
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
        worst = std::max(worst, grad_err(a.weights.data()[i], b.weights.data()[i]));
    }
    return worst;
}

template <typename T>
UpstreamGradient<T> make_upstream(ReductionMode red, std::size_t positions, T scalar) {
    if (red == ReductionMode::None) {
        return UpstreamGradient<T>::make_per_position(std::vector<T>(positions, scalar));
    }
    return UpstreamGradient<T>::make_scalar(scalar);
}

template <typename T>
SuiteResult loss_equivalence_t(const VerifyConfig& cfg) {
    SuiteResult res;
    res.name = "loss_equivalence";
    res.tolerance = pick_tol(cfg, 1e-5, 1e-10);
    std::uint64_t st = cfg.seed ^ 0x10c5edull;
    for (std::size_t i = 0; i < cfg.loss_instances; ++i) {
        const std::size_t n = 1 + splitmix64(st) % 64;
        const std::size_t d = 1 + splitmix64(st) % 64;
        const std::size_t v = 2 + splitmix64(st) % 1023;
        const ReductionMode red = cycle_reduction(i);
        const Instance<T> inst =
            gen_instance<T>(n, d, v, splitmix64(st), is_bf16(cfg), i % 2 == 1);

        MemoryLedger ledger;
        const FusedOutput<T> fused = fused_forward(MatrixView<T>(inst.hidden),
                                                   MatrixView<T>(inst.weights), inst.targets,
                                                   red, ledger);
        const DenseMatrix<T> logits = project_logits(MatrixView<T>(inst.hidden),
                                                     MatrixView<T>(inst.weights), ledger);
        const LossValue<T> ref = ce_loss_from_logits(MatrixView<T>(logits), inst.targets, red);

        if (red == ReductionMode::None) {
            for (std::size_t p = 0; p < n; ++p) {
                res.max_error = std::max(res.max_error,
                                         rel_err(fused.loss.vector()[p], ref.vector()[p]));
            }
        } else {
            res.max_error = std::max(res.max_error, rel_err(fused.loss.scalar(), ref.scalar()));
        }
        if (ledger.current_bytes() != 0) {
            res.detail = "ledger not balanced";
            res.max_error = std::numeric_limits<double>::infinity();
        }
        ++res.cases;
    }
    res.passed = res.max_error <= res.tolerance;
    return res;
}

template <typename T>
SuiteResult gradient_recompute_t(const VerifyConfig& cfg) {
    SuiteResult res;
    res.name = "gradient_recompute";
    res.tolerance = pick_tol(cfg, 1e-6, 1e-10);
    std::uint64_t st = cfg.seed ^ 0x96adull;
    for (std::size_t i = 0; i < cfg.grad_instances; ++i) {
        const std::size_t n = 1 + splitmix64(st) % 8;
        const std::size_t d = 1 + splitmix64(st) % 8;
        const std::size_t v = 2 + splitmix64(st) % 15;
        const ReductionMode red = cycle_reduction(i);
        const T scalar = (i % 2 == 0) ? T{1} : static_cast<T>(0.7);
        const Instance<T> inst =
            gen_instance<T>(n, d, v, splitmix64(st), is_bf16(cfg), i % 4 == 3);
        const auto upstream = make_upstream<T>(red, n, scalar);

        MemoryLedger ledger;
        const MatrixView<T> hv(inst.hidden);
        const MatrixView<T> wv(inst.weights);
        const FusedOutput<T> fwd = fused_forward(hv, wv, inst.targets, red, ledger);
        const Gradients<T> fused = fused_backward_recompute(
            hv, wv, inst.targets, std::span<const SoftmaxStats<T>>(fwd.stats), upstream, red,
            ledger);
        const Gradients<T> ref = reference_backward(hv, wv, inst.targets, upstream, red, ledger);
        res.max_error = std::max(res.max_error, max_grad_err(fused, ref));
        if (ledger.current_bytes() != 0) {
            res.detail = "ledger not balanced";
            res.max_error = std::numeric_limits<double>::infinity();
        }
        ++res.cases;
    }
    res.passed = res.max_error <= res.tolerance;
    return res;
}

// Central finite differences of the fused loss, always in double: the
// check is about analytic correctness, not storage precision.
SuiteResult finite_difference_impl(const VerifyConfig& cfg) {
    SuiteResult res;
    res.name = "finite_difference";
    res.tolerance = 1e-6;
    res.detail = "f64, step 1e-5, abs floor 1e-8";
    const double step = 1e-5;
    std::uint64_t st = cfg.seed ^ 0xfd1ffull;

    for (std::size_t i = 0; i < cfg.grad_instances; ++i) {
        const std::size_t n = 1 + splitmix64(st) % 8;
        const std::size_t d = 1 + splitmix64(st) % 8;
        const std::size_t v = 2 + splitmix64(st) % 15;
        const ReductionMode red = (i % 2 == 0) ? ReductionMode::Mean : ReductionMode::Sum;
        Instance<double> inst = gen_instance<double>(n, d, v, splitmix64(st), false, i % 4 == 3);

        MemoryLedger ledger;
        const FusedOutput<double> fwd = fused_forward(MatrixView<double>(inst.hidden),
                                                      MatrixView<double>(inst.weights),
                                                      inst.targets, red, ledger);
        const Gradients<double> grads = fused_backward_recompute(
            MatrixView<double>(inst.hidden), MatrixView<double>(inst.weights), inst.targets,
            std::span<const SoftmaxStats<double>>(fwd.stats),
            UpstreamGradient<double>::make_scalar(1.0), red, ledger);

        const auto loss_at = [&]() {
            MemoryLedger l;
            return fused_forward(MatrixView<double>(inst.hidden),
                                 MatrixView<double>(inst.weights), inst.targets, red, l)
                .loss.scalar();
        };
        const auto check = [&](double analytic, double* x) {
            const double saved = *x;
            *x = saved + step;
            const double up = loss_at();
            *x = saved - step;
            const double down = loss_at();
            *x = saved;
            const double fd = (up - down) / (2.0 * step);
            const double err =
                std::fabs(analytic - fd) / (std::max(std::fabs(analytic), std::fabs(fd)) + 1e-2);
            res.max_error = std::max(res.max_error, err);
        };

        for (std::size_t e = 0; e < inst.hidden.size(); ++e) {
            check(grads.hidden.data()[e], inst.hidden.data() + e);
        }
        for (std::size_t e = 0; e < inst.weights.size(); ++e) {
            check(grads.weights.data()[e], inst.weights.data() + e);
        }
        ++res.cases;
    }
    res.passed = res.max_error <= res.tolerance;
    return res;
}

template <typename T>
SuiteResult gradient_paths_t(const VerifyConfig& cfg) {
    SuiteResult res;
    res.name = "gradient_paths";
    res.tolerance = pick_tol(cfg, 1e-6, 1e-12);
    std::uint64_t st = cfg.seed ^ 0xa19034ull;
    bool none_rejected = false;

    for (std::size_t i = 0; i < cfg.grad_instances; ++i) {
        const std::size_t n = 1 + splitmix64(st) % 8;
        const std::size_t d = 1 + splitmix64(st) % 8;
        const std::size_t v = 2 + splitmix64(st) % 15;
        const ReductionMode red = (i % 2 == 0) ? ReductionMode::Mean : ReductionMode::Sum;
        const T scalar = (i % 3 == 0) ? T{1} : (i % 3 == 1 ? static_cast<T>(-0.3)
                                                           : static_cast<T>(2.5));
        const Instance<T> inst =
            gen_instance<T>(n, d, v, splitmix64(st), is_bf16(cfg), i % 4 == 3);
        const MatrixView<T> hv(inst.hidden);
        const MatrixView<T> wv(inst.weights);

        MemoryLedger ledger;
        const FusedOutput<T> fwd = fused_forward(hv, wv, inst.targets, red, ledger);
        const Gradients<T> direct = fused_backward_recompute(
            hv, wv, inst.targets, std::span<const SoftmaxStats<T>>(fwd.stats),
            UpstreamGradient<T>::make_scalar(scalar), red, ledger);

        PartialGradOutput<T> partial =
            fused_forward_with_partial_grads(hv, wv, inst.targets, red, ledger);
        const T gamma_eff =
            effective_scalar_upstream(scalar, red, inst.targets.count_valid());
        const Gradients<T> rescaled = scale_partial_grads(std::move(partial.partials), gamma_eff);

        res.max_error = std::max(res.max_error, max_grad_err(direct, rescaled));
        ++res.cases;
    }

    try {
        const Instance<T> inst = gen_instance<T>(2, 2, 4, cfg.seed, is_bf16(cfg), false);
        MemoryLedger ledger;
        (void)fused_forward_with_partial_grads(MatrixView<T>(inst.hidden),
                                               MatrixView<T>(inst.weights), inst.targets,
                                               ReductionMode::None, ledger);
    } catch (const UnsupportedReduction&) {
        none_rejected = true;
    }
    res.detail = none_rejected ? "none reduction rejected" : "none reduction NOT rejected";
    res.passed = res.max_error <= res.tolerance && none_rejected;
    return res;
}

template <typename T>
SuiteResult window_sweep_t(const VerifyConfig& cfg) {
    SuiteResult res;
    res.name = "window_sweep";
    res.tolerance = pick_tol(cfg, 1e-6, 1e-12);
    const std::size_t n = 32, d = 32, v = 257;
    const Instance<T> inst = gen_instance<T>(n, d, v, cfg.seed ^ 0x319d03ull, is_bf16(cfg), false);
    const MatrixView<T> hv(inst.hidden);
    const MatrixView<T> wv(inst.weights);

    MemoryLedger ledger;
    const FusedOutput<T> base = fused_forward(hv, wv, inst.targets, ReductionMode::None, ledger);

    bool bitwise = true;
    for (std::size_t w : {std::size_t{1}, std::size_t{3}, std::size_t{16}, std::size_t{128},
                          std::size_t{256}, std::size_t{257}}) {
        const FusedOutput<T> win = fused_forward_windowed(
            hv, wv, inst.targets, ReductionMode::None, WindowConfig{w, 1}, ledger);
        for (std::size_t p = 0; p < n; ++p) {
            res.max_error = std::max(res.max_error,
                                     rel_err(win.loss.vector()[p], base.loss.vector()[p]));
        }
        if (w == v) {
            for (std::size_t p = 0; p < n; ++p) {
                bitwise = bitwise && win.loss.vector()[p] == base.loss.vector()[p] &&
                          win.stats[p].m == base.stats[p].m &&
                          win.stats[p].a == base.stats[p].a &&
                          win.stats[p].z_target == base.stats[p].z_target;
            }
        }
        ++res.cases;
    }
    res.detail = bitwise ? "W=V bitwise identical" : "W=V NOT bitwise identical";
    res.passed = res.max_error <= res.tolerance && bitwise;
    return res;
}

template <typename T>
SuiteResult shard_invariance_t(const VerifyConfig& cfg) {
    SuiteResult res;
    res.name = "shard_invariance";
    res.tolerance = pick_tol(cfg, 1e-6, 1e-12);
    const std::size_t n = 24, d = 16, v = 64;
    const std::size_t ranks = std::max<std::size_t>(cfg.ranks, 1);
    const Instance<T> inst = gen_instance<T>(n, d, v, cfg.seed ^ 0x54a9dull, is_bf16(cfg), false);
    const MatrixView<T> hv(inst.hidden);
    const MatrixView<T> wv(inst.weights);
    const auto upstream = UpstreamGradient<T>::make_scalar(T{1});

    MemoryLedger ledger;
    const FusedOutput<T> base_fwd = fused_forward(hv, wv, inst.targets, ReductionMode::Mean,
                                                  ledger);
    const Gradients<T> base_bwd = fused_backward_recompute(
        hv, wv, inst.targets, std::span<const SoftmaxStats<T>>(base_fwd.stats), upstream,
        ReductionMode::Mean, ledger);

    switch (cfg.mode) {
        case ParallelMode::TensorParallel: {
            const ShardLayout layout = ShardLayout::tensor_parallel(v, ranks);
            const auto shards = shard_weights(wv, layout);

            std::vector<std::size_t> found_count(n, 0);
            for (std::size_t r = 0; r < shards.size(); ++r) {
                const RankPartial<T> part = tp_rank_partial(r, hv, shards[r], inst.targets);
                for (std::size_t p = 0; p < n; ++p) {
                    found_count[p] += part.stats[p].target_found ? 1 : 0;
                }
            }
            bool exactly_once = true;
            for (std::size_t p = 0; p < n; ++p) {
                exactly_once = exactly_once && found_count[p] == 1;
            }
            res.detail = exactly_once ? "target_found exactly once per position"
                                      : "target_found NOT exactly once";

            const FusedOutput<T> fwd = tp_forward(hv, shards, inst.targets, ReductionMode::Mean,
                                                  ledger);
            res.max_error = std::max(res.max_error,
                                     rel_err(fwd.loss.scalar(), base_fwd.loss.scalar()));
            const TpGradients<T> bwd = tp_backward(
                hv, shards, inst.targets, std::span<const SoftmaxStats<T>>(fwd.stats), upstream,
                ReductionMode::Mean, ledger);
            for (std::size_t e = 0; e < base_bwd.hidden.size(); ++e) {
                res.max_error = std::max(
                    res.max_error, grad_err(bwd.hidden.data()[e], base_bwd.hidden.data()[e]));
            }
            std::size_t row = 0;
            for (const DenseMatrix<T>& shard_grad : bwd.weight_shards) {
                for (std::size_t rr = 0; rr < shard_grad.rows(); ++rr, ++row) {
                    for (std::size_t c = 0; c < d; ++c) {
                        res.max_error = std::max(res.max_error,
                                                 grad_err(shard_grad.at(rr, c),
                                                          base_bwd.weights.at(row, c)));
                    }
                }
            }
            res.passed = exactly_once;
            ++res.cases;
            break;
        }
        case ParallelMode::SequenceParallel: {
            const ShardLayout sp = ShardLayout::sequence_parallel(n, ranks);
            const auto h_shards = shard_positions(hv, sp);
            const DenseMatrix<T> gathered = sp_to_tp_gather(h_shards);
            bool roundtrip = gathered.size() == hv.rows * hv.cols &&
                             std::memcmp(gathered.data(), hv.data,
                                         gathered.size() * sizeof(T)) == 0;
            res.detail = roundtrip ? "gather is a bitwise round trip"
                                   : "gather NOT a bitwise round trip";

            const ShardLayout tp = ShardLayout::tensor_parallel(v, ranks);
            const auto w_shards = shard_weights(wv, tp);
            const FusedOutput<T> fwd = tp_forward(MatrixView<T>(gathered), w_shards, inst.targets,
                                                  ReductionMode::Mean, ledger);
            res.max_error = std::max(res.max_error,
                                     rel_err(fwd.loss.scalar(), base_fwd.loss.scalar()));
            const TpGradients<T> bwd = tp_backward(
                MatrixView<T>(gathered), w_shards, inst.targets,
                std::span<const SoftmaxStats<T>>(fwd.stats), upstream, ReductionMode::Mean,
                ledger);
            for (std::size_t e = 0; e < base_bwd.hidden.size(); ++e) {
                res.max_error = std::max(
                    res.max_error, grad_err(bwd.hidden.data()[e], base_bwd.hidden.data()[e]));
            }
            res.passed = roundtrip;
            ++res.cases;
            break;
        }
        case ParallelMode::DataParallel: {
            const ShardLayout dp = ShardLayout::data_parallel(n, ranks);
            const auto h_shards = shard_positions(hv, dp);
            const auto y_shards = shard_targets(inst.targets, dp);
            std::vector<DpReplica<T>> replicas;
            for (std::size_t r = 0; r < ranks; ++r) {
                replicas.push_back(DpReplica<T>{h_shards[r], y_shards[r]});
            }
            const DpResult<T> step = dp_step(replicas, wv, ReductionMode::Mean, ledger);
            res.max_error = std::max(res.max_error,
                                     rel_err(step.loss, base_fwd.loss.scalar()));
            for (std::size_t e = 0; e < base_bwd.weights.size(); ++e) {
                res.max_error = std::max(res.max_error,
                                         grad_err(step.weight_grad.data()[e],
                                                  base_bwd.weights.data()[e]));
            }
            res.detail = "mean-of-ranks sync";
            res.passed = true;
            ++res.cases;
            break;
        }
    }
    res.passed = res.passed && res.max_error <= res.tolerance;
    return res;
}

// Quarter-grid construction: every logit is exact in the compute type both
// with and without the constant offset, so the streamed stats of the
// shifted instance are bit-for-bit those of the base instance. The offset
// column uses 10^4 (or 2^11 * 5 when storage is bf16, which cannot hold
// 10^4 exactly).
template <typename T>
SuiteResult stability_t(const VerifyConfig& cfg) {
    SuiteResult res;
    res.name = "stability";
    res.tolerance = pick_tol(cfg, 1e-4, 1e-10);
    const std::size_t n = 4, dq = 8, v = 12;
    const std::size_t d = dq + 1;
    const T shift = is_bf16(cfg) ? static_cast<T>(10240) : static_cast<T>(10000);

    std::uint64_t st = cfg.seed ^ 0x57ab1eull;
    DenseMatrix<T> hidden(n, d);
    DenseMatrix<T> w_base(v, d);
    DenseMatrix<T> w_shift(v, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dq; ++k) {
            hidden.at(i, k) =
                static_cast<T>(static_cast<double>(static_cast<std::int64_t>(splitmix64(st) % 9) - 4) / 4.0);
        }
        hidden.at(i, dq) = T{1};
    }
    for (std::size_t r = 0; r < v; ++r) {
        for (std::size_t k = 0; k < dq; ++k) {
            const T val =
                static_cast<T>(static_cast<double>(static_cast<std::int64_t>(splitmix64(st) % 9) - 4) / 4.0);
            w_base.at(r, k) = val;
            w_shift.at(r, k) = val;
        }
        w_base.at(r, dq) = T{0};
        w_shift.at(r, dq) = shift;
    }
    std::vector<std::int64_t> y(n);
    for (std::int64_t& t : y) {
        t = static_cast<std::int64_t>(splitmix64(st) % v);
    }
    const TargetVector targets(std::move(y));

    MemoryLedger ledger;
    const FusedOutput<T> shifted = fused_forward(MatrixView<T>(hidden), MatrixView<T>(w_shift),
                                                 targets, ReductionMode::None, ledger);
    const DenseMatrix<T> base_z = project_logits(MatrixView<T>(hidden), MatrixView<T>(w_base),
                                                 ledger);
    const LossValue<T> base = ce_loss_from_logits(MatrixView<T>(base_z), targets,
                                                  ReductionMode::None);

    bool finite = true;
    for (std::size_t p = 0; p < n; ++p) {
        finite = finite && std::isfinite(static_cast<double>(shifted.loss.vector()[p]));
        res.max_error = std::max(res.max_error,
                                 rel_err(shifted.loss.vector()[p], base.vector()[p]));
    }

    // Naive unsafe reference: no max subtraction, overflows on the shifted
    // logits.
    const DenseMatrix<T> shift_z = project_logits(MatrixView<T>(hidden), MatrixView<T>(w_shift),
                                                  ledger);
    bool overflowed = true;
    for (std::size_t p = 0; p < n; ++p) {
        T acc = T{0};
        for (std::size_t c = 0; c < v; ++c) {
            acc += std::exp(shift_z.at(p, c));
        }
        const T naive_loss = std::log(acc) - shift_z.at(p, static_cast<std::size_t>(targets[p]));
        overflowed = overflowed && !std::isfinite(static_cast<double>(naive_loss));
    }

    res.cases = n;
    res.detail = std::string(finite ? "shifted fused loss finite" : "shifted fused loss NOT finite") +
                 (overflowed ? "; naive exp overflows" : "; naive exp did NOT overflow");
    res.passed = finite && overflowed && res.max_error <= res.tolerance;
    return res;
}

template <typename T>
std::vector<SuiteResult> run_all_t(const VerifyConfig& cfg) {
    return {
        loss_equivalence_t<T>(cfg),       gradient_recompute_t<T>(cfg),
        finite_difference_impl(cfg),      gradient_paths_t<T>(cfg),
        window_sweep_t<T>(cfg),           shard_invariance_t<T>(cfg),
        stability_t<T>(cfg),
    };
}

}  // namespace

SuiteResult loss_equivalence_suite(const VerifyConfig& cfg) {
    return is_f64(cfg) ? loss_equivalence_t<double>(cfg) : loss_equivalence_t<float>(cfg);
}
SuiteResult gradient_recompute_suite(const VerifyConfig& cfg) {
    return is_f64(cfg) ? gradient_recompute_t<double>(cfg) : gradient_recompute_t<float>(cfg);
}
SuiteResult finite_difference_suite(const VerifyConfig& cfg) {
    return finite_difference_impl(cfg);
}
SuiteResult gradient_paths_suite(const VerifyConfig& cfg) {
    return is_f64(cfg) ? gradient_paths_t<double>(cfg) : gradient_paths_t<float>(cfg);
}
SuiteResult window_sweep_suite(const VerifyConfig& cfg) {
    return is_f64(cfg) ? window_sweep_t<double>(cfg) : window_sweep_t<float>(cfg);
}
SuiteResult shard_invariance_suite(const VerifyConfig& cfg) {
    return is_f64(cfg) ? shard_invariance_t<double>(cfg) : shard_invariance_t<float>(cfg);
}
SuiteResult stability_suite(const VerifyConfig& cfg) {
    return is_f64(cfg) ? stability_t<double>(cfg) : stability_t<float>(cfg);
}

std::vector<SuiteResult> run_all(const VerifyConfig& cfg) {
    return is_f64(cfg) ? run_all_t<double>(cfg) : run_all_t<float>(cfg);
}

}  // namespace fusedce::verify
