#include "fusedce/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <ostream>

#include "fusedce/fused_backward.hpp"
#include "fusedce/fused_forward.hpp"
#include "fusedce/instance.hpp"
#include "fusedce/memory_ledger.hpp"
#include "fusedce/reference.hpp"

namespace fusedce::bench {

std::string method_name(Method m) {
    switch (m) {
        case Method::Canonical: return "canonical";
        case Method::Fused: return "fused";
        case Method::FusedWindowed: return "fused_windowed";
        case Method::FusedPartialGrad: return "fused_partial_grad";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    if (name == "canonical") return Method::Canonical;
    if (name == "fused") return Method::Fused;
    if (name == "fused_windowed") return Method::FusedWindowed;
    if (name == "fused_partial_grad") return Method::FusedPartialGrad;
    throw InvalidLayout("unknown method '" + name + "'");
}

EmitFormat parse_format(const std::string& name) {
    if (name == "csv") return EmitFormat::Csv;
    if (name == "markdown") return EmitFormat::Markdown;
    if (name == "plotdata") return EmitFormat::Plotdata;
    throw InvalidLayout("unknown format '" + name + "'");
}

namespace {

double median_of(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    if (n % 2 == 1) {
        return xs[n / 2];
    }
    return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// One timed iteration; returns the loss as double. The ledger accumulates
// the peak across the stage sequence.
template <typename T>
double run_iteration(const BenchConfig& cfg, Method method, const Instance<T>& inst,
                     std::size_t vocab, MemoryLedger& ledger, const ExecPolicy& policy) {
    const MatrixView<T> hidden(inst.hidden);
    const MatrixView<T> weights(inst.weights);
    const TargetVector& targets = inst.targets;
    const auto upstream = cfg.reduction == ReductionMode::None
                              ? UpstreamGradient<T>::make_per_position(
                                    std::vector<T>(targets.size(), T{1}))
                              : UpstreamGradient<T>::make_scalar(T{1});

    const auto scalarize = [&](const LossValue<T>& loss) {
        if (cfg.reduction == ReductionMode::None) {
            T s = T{0};
            for (T x : loss.vector()) {
                s += x;
            }
            return static_cast<double>(s);
        }
        return static_cast<double>(loss.scalar());
    };

    switch (method) {
        case Method::Canonical: {
            DenseMatrix<T> logits = project_logits(hidden, weights, ledger, policy);
            const LossValue<T> loss = ce_loss_from_logits(MatrixView<T>(logits), targets,
                                                          cfg.reduction);
            if (!cfg.forward_only) {
                const Gradients<T> grads = reference_backward(hidden, weights, targets, upstream,
                                                              cfg.reduction, ledger, policy);
                (void)grads;
            }
            return scalarize(loss);
        }
        case Method::Fused: {
            const FusedOutput<T> out = fused_forward(hidden, weights, targets, cfg.reduction,
                                                     ledger, policy);
            if (!cfg.forward_only) {
                const Gradients<T> grads = fused_backward_recompute(
                    hidden, weights, targets, std::span<const SoftmaxStats<T>>(out.stats),
                    upstream, cfg.reduction, ledger, policy);
                (void)grads;
            }
            return scalarize(out.loss);
        }
        case Method::FusedWindowed: {
            const std::size_t window = cfg.window_size != 0 ? cfg.window_size : vocab;
            const WindowConfig wc{window, std::max<std::size_t>(cfg.workers, 1)};
            const FusedOutput<T> out = fused_forward_windowed(hidden, weights, targets,
                                                              cfg.reduction, wc, ledger, policy);
            if (!cfg.forward_only) {
                const Gradients<T> grads = fused_backward_recompute(
                    hidden, weights, targets, std::span<const SoftmaxStats<T>>(out.stats),
                    upstream, cfg.reduction, ledger, policy);
                (void)grads;
            }
            return scalarize(out.loss);
        }
        case Method::FusedPartialGrad: {
            PartialGradOutput<T> out = fused_forward_with_partial_grads(
                hidden, weights, targets, cfg.reduction, ledger, policy);
            const double loss = scalarize(out.loss);
            if (!cfg.forward_only) {
                const T gamma_eff = effective_scalar_upstream(T{1}, cfg.reduction,
                                                              targets.count_valid());
                const Gradients<T> grads = scale_partial_grads(std::move(out.partials), gamma_eff);
                (void)grads;
            }
            return loss;
        }
    }
    throw InvalidLayout("unknown method");
}

template <typename T>
BenchRecord run_case_t(const BenchConfig& cfg, Method method, std::size_t bt, std::size_t vocab) {
    Instance<T> inst = make_random_instance<T>(bt, cfg.hidden, vocab, cfg.seed);
    if (cfg.precision.storage == StoragePrecision::Bf16Emulated) {
        inst.hidden.round_to_bf16();
        inst.weights.round_to_bf16();
    }
    ExecPolicy policy;
    policy.workers = std::max<std::size_t>(cfg.workers, 1);

    MemoryLedger ledger;
    std::vector<double> latencies;
    latencies.reserve(cfg.repeats);
    double loss = 0.0;
    std::uint64_t peak = 0;

    for (std::size_t it = 0; it < cfg.warmup + cfg.repeats; ++it) {
        ledger.reset();
        const auto t0 = std::chrono::steady_clock::now();
        loss = run_iteration(cfg, method, inst, vocab, ledger, policy);
        const auto t1 = std::chrono::steady_clock::now();
        if (it >= cfg.warmup) {
            latencies.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        peak = static_cast<std::uint64_t>(ledger.peak_bytes());
    }

    BenchRecord rec;
    rec.bt = bt;
    rec.vocab = vocab;
    rec.hidden = cfg.hidden;
    rec.method = method_name(method);
    rec.precision = precision_name(cfg.precision);
    rec.latency_s = median_of(latencies);
    rec.latency_min_s = *std::min_element(latencies.begin(), latencies.end());
    rec.latency_max_s = *std::max_element(latencies.begin(), latencies.end());
    rec.aux_peak_bytes = peak;
    rec.loss = loss;
    return rec;
}

}  // namespace

BenchRecord run_case(const BenchConfig& cfg, Method method, std::size_t bt, std::size_t vocab) {
    if (cfg.repeats == 0) {
        throw InvalidLayout("repeats must be at least 1");
    }
    if (cfg.precision.compute == ComputePrecision::F64) {
        return run_case_t<double>(cfg, method, bt, vocab);
    }
    return run_case_t<float>(cfg, method, bt, vocab);
}

std::vector<BenchRecord> sweep(const BenchConfig& cfg) {
    if (cfg.bt_values.empty() || cfg.vocab_values.empty() || cfg.methods.empty()) {
        throw EmptyGrid("bench grid needs at least one bt, vocab and method");
    }
    std::vector<BenchRecord> records;
    records.reserve(cfg.bt_values.size() * cfg.vocab_values.size() * cfg.methods.size());
    for (std::size_t bt : cfg.bt_values) {
        for (std::size_t vocab : cfg.vocab_values) {
            for (Method m : cfg.methods) {
                records.push_back(run_case(cfg, m, bt, vocab));
            }
        }
    }
    return records;
}

namespace {

void emit_csv(const std::vector<BenchRecord>& records, std::ostream& out) {
    out << "bt,vocab,hidden,method,precision,latency_s,latency_min_s,latency_max_s,"
           "aux_peak_bytes,loss\n";
    char buf[256];
    for (const BenchRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%s,%s,%.9f,%.9f,%.9f,%llu,%.9e\n", r.bt,
                      r.vocab, r.hidden, r.method.c_str(), r.precision.c_str(), r.latency_s,
                      r.latency_min_s, r.latency_max_s,
                      static_cast<unsigned long long>(r.aux_peak_bytes), r.loss);
        out << buf;
    }
}

// Row per (bt, vocab); latency and memory column pairs per method, both in
// first-appearance order.
void emit_markdown(const std::vector<BenchRecord>& records, std::ostream& out) {
    std::vector<std::string> methods;
    std::vector<std::pair<std::size_t, std::size_t>> keys;
    for (const BenchRecord& r : records) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
        const std::pair<std::size_t, std::size_t> key{r.bt, r.vocab};
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            keys.push_back(key);
        }
    }

    out << "| B*T | V |";
    for (const std::string& m : methods) {
        out << " latency_ms " << m << " |";
    }
    for (const std::string& m : methods) {
        out << " memory_mb " << m << " |";
    }
    out << "\n| ---: | ---: |";
    for (std::size_t i = 0; i < 2 * methods.size(); ++i) {
        out << " ---: |";
    }
    out << "\n";

    char buf[64];
    for (const auto& [bt, vocab] : keys) {
        out << "| " << bt << " | " << vocab << " |";
        const auto find_rec = [&](const std::string& m) -> const BenchRecord* {
            for (const BenchRecord& r : records) {
                if (r.bt == bt && r.vocab == vocab && r.method == m) {
                    return &r;
                }
            }
            return nullptr;
        };
        for (const std::string& m : methods) {
            if (const BenchRecord* r = find_rec(m)) {
                std::snprintf(buf, sizeof(buf), " %.3f |", r->latency_s * 1e3);
                out << buf;
            } else {
                out << " - |";
            }
        }
        for (const std::string& m : methods) {
            if (const BenchRecord* r = find_rec(m)) {
                std::snprintf(buf, sizeof(buf), " %.2f |",
                              static_cast<double>(r->aux_peak_bytes) / (1024.0 * 1024.0));
                out << buf;
            } else {
                out << " - |";
            }
        }
        out << "\n";
    }
}

// One series block per (method, bt), rows keyed by vocab. Blocks are
// separated by two blank lines so gnuplot-style index addressing works on
// the single stream.
void emit_plotdata(const std::vector<BenchRecord>& records, std::ostream& out) {
    std::vector<std::pair<std::string, std::size_t>> series;
    for (const BenchRecord& r : records) {
        const std::pair<std::string, std::size_t> key{r.method, r.bt};
        if (std::find(series.begin(), series.end(), key) == series.end()) {
            series.push_back(key);
        }
    }
    char buf[160];
    bool first = true;
    for (const auto& [method, bt] : series) {
        if (!first) {
            out << "\n\n";
        }
        first = false;
        out << "# series method=" << method << " bt=" << bt << "\n";
        out << "# vocab latency_s aux_peak_bytes loss\n";
        for (const BenchRecord& r : records) {
            if (r.method != method || r.bt != bt) {
                continue;
            }
            std::snprintf(buf, sizeof(buf), "%zu %.9f %llu %.9e\n", r.vocab, r.latency_s,
                          static_cast<unsigned long long>(r.aux_peak_bytes), r.loss);
            out << buf;
        }
    }
}

}  // namespace

void emit(const std::vector<BenchRecord>& records, EmitFormat format, std::ostream& out) {
    if (records.empty()) {
        throw EmptyInput("no records to emit");
    }
    switch (format) {
        case EmitFormat::Csv: emit_csv(records, out); break;
        case EmitFormat::Markdown: emit_markdown(records, out); break;
        case EmitFormat::Plotdata: emit_plotdata(records, out); break;
    }
}

}  // namespace fusedce::bench
