#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fusedce/dense_matrix.hpp"
#include "fusedce/errors.hpp"
#include "fusedce/reduction.hpp"

namespace fusedce::bench {

enum class Method { Canonical, Fused, FusedWindowed, FusedPartialGrad };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct BenchConfig {
    std::vector<std::size_t> bt_values;
    std::vector<std::size_t> vocab_values;
    std::size_t hidden = 256;
    std::vector<Method> methods = {Method::Canonical, Method::Fused};
    PrecisionMode precision;
    ReductionMode reduction = ReductionMode::Mean;
    std::size_t window_size = 0;  // 0 = whole vocabulary per window
    std::size_t repeats = 5;
    std::size_t warmup = 2;
    std::uint64_t seed = 42;
    std::size_t workers = 1;
    bool forward_only = false;
};

// One observation. Latency is the median over repeats (after warmup
// discards) with min/max spread; aux_peak_bytes is the ledger peak, which
// is deterministic across runs, unlike the latencies.
struct BenchRecord {
    std::size_t bt = 0;
    std::size_t vocab = 0;
    std::size_t hidden = 0;
    std::string method;
    std::string precision;
    double latency_s = 0.0;
    double latency_min_s = 0.0;
    double latency_max_s = 0.0;
    std::uint64_t aux_peak_bytes = 0;
    double loss = 0.0;
};

// Runs one (bt, vocab, method) point: deterministic instance from the
// seed, timed forward (+ backward unless forward_only). aux_peak_bytes is
// the high-water mark the operators themselves report to the ledger; the
// model inputs H, W, Y are outside the accounting.
BenchRecord run_case(const BenchConfig& cfg, Method method, std::size_t bt, std::size_t vocab);

// Cartesian product bt_values x vocab_values x methods, in that row-major
// order. Throws EmptyGrid on an empty axis.
std::vector<BenchRecord> sweep(const BenchConfig& cfg);

enum class EmitFormat { Csv, Markdown, Plotdata };

EmitFormat parse_format(const std::string& name);

// CSV: pinned header plus one row per record. Markdown: one row per
// (bt, vocab) with latency and memory column pairs per method. Plotdata:
// one whitespace-separated series block per (method, bt), keyed by vocab,
// blocks separated by blank lines. Throws EmptyInput on no records.
void emit(const std::vector<BenchRecord>& records, EmitFormat format, std::ostream& out);

}  // namespace fusedce::bench
